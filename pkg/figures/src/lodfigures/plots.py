"""Log-log renderings of the study CSVs.

Three kinds mirror the three study tables: `strong` (multiscale vs plain
coarse error with first/second-order guides), `weak` (LOD-MC / LOD-MLMC /
FEM-MC series with guides), and `timing` (projected totals per method).
Rendering is a pure transformation: a byte-identical CSV yields a
pixel-identical image (fixed style, Agg backend, pinned metadata), and the
inputs are never modified.
"""

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.4,
    "legend.framealpha": 0.8,
}

SCHEMAS = {
    "strong": ["H", "ell", "M", "lod_error", "lod_stderr", "fem_error"],
    "weak": ["method", "H_J", "total_samples", "weak_error"],
    "timing": ["method", "H_J", "offline_seconds", "projected_seconds"],
}


class SchemaError(ValueError):
    """The CSV is empty or does not carry the expected columns."""


@dataclass
class PlotSpec:
    kind: str                    # strong | weak | timing
    csv_path: str
    out_path: str
    guides: tuple = (1, 2)       # guide-line orders for error plots
    title: str = ""


def read_rows(path, columns):
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in columns if c not in header]
            if missing:
                raise SchemaError(f"{path}: missing columns {missing} (header {header})")
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def guide_series(h_values, anchor, order):
    """Reference line through (max(h), anchor) decaying like h^order."""
    h_max = max(h_values)
    return [anchor * (h / h_max) ** order for h in h_values]


def _loglog_axes(ax, xlabel, ylabel, ybase=2):
    ax.set_xscale("log", base=2)
    ax.set_yscale("log", base=ybase)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)


def _add_guides(ax, hs, anchor, orders):
    for order in orders:
        label = "O(H)" if order == 1 else f"O(H^{order})"
        ax.plot(hs, guide_series(hs, anchor, order), "--", alpha=0.5, label=label)


def _render_strong(spec, ax):
    rows = read_rows(spec.csv_path, SCHEMAS["strong"])
    hs = [float(r["H"]) for r in rows]
    lod = [float(r["lod_error"]) for r in rows]
    fem = [float(r["fem_error"]) for r in rows]
    ax.plot(hs, lod, "x-", label="LOD")
    ax.plot(hs, fem, "o-", label="FEM")
    _add_guides(ax, hs, lod[hs.index(max(hs))], spec.guides)
    _loglog_axes(ax, "H", "strong error at final time")


def _render_weak(spec, ax):
    rows = read_rows(spec.csv_path, SCHEMAS["weak"])
    series = {}
    for r in rows:
        series.setdefault(r["method"], []).append((float(r["H_J"]), float(r["weak_error"])))
    markers = {"LOD-MC": "x-", "LOD-MLMC": "v-", "FEM-MC": "o-"}
    for method in sorted(series):
        pts = sorted(series[method], reverse=True)
        ax.plot([h for h, _ in pts], [e for _, e in pts], markers.get(method, "s-"), label=method)
    anchor_series = series.get("LOD-MC") or series.get("LOD-MLMC")
    if anchor_series:
        pts = sorted(anchor_series, reverse=True)
        hs = [h for h, _ in pts]
        _add_guides(ax, hs, pts[0][1], spec.guides)
    _loglog_axes(ax, "H_J", "weak error")


def _render_timing(spec, ax):
    rows = read_rows(spec.csv_path, SCHEMAS["timing"])
    series = {}
    for r in rows:
        series.setdefault(r["method"], []).append((float(r["H_J"]), float(r["projected_seconds"])))
    for method in sorted(series):
        pts = sorted(series[method], reverse=True)
        ax.plot([h for h, _ in pts], [t for _, t in pts], "d-", label=method)
    _loglog_axes(ax, "H_J", "projected time [s]", ybase=10)


RENDERERS = {"strong": _render_strong, "weak": _render_weak, "timing": _render_timing}


def render(spec):
    """Render one study CSV to an image file; returns the output path."""
    if spec.kind not in RENDERERS:
        raise SchemaError(f"unknown plot kind {spec.kind!r} (expected one of {sorted(RENDERERS)})")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        try:
            RENDERERS[spec.kind](spec, ax)
            if spec.title:
                ax.set_title(spec.title)
            ax.legend(loc="best")
            fig.savefig(spec.out_path, metadata={"Software": None})
        finally:
            plt.close(fig)
    return spec.out_path

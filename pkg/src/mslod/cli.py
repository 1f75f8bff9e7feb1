"""Command-line surface: study orchestration, CSV persistence, caching.

Subcommands: correctors, strong, weak, mlmc, timing, plot-data. Outputs are
deterministic functions of (config, seed) for any --threads value; timing.csv
is the one exception since it contains wall-clock measurements. Exit codes:
0 success, 2 usage, 3 unreadable/invalid config, 4 incompatible corrector
cache, 1 any other error.
"""

import argparse
import json
import os
import sys

from .config import ExperimentConfig
from .context import ExperimentContext
from .errors import CacheError, ConfigError, MslodError
from .estimators import (
    mlmc_level_report,
    strong_error_study,
    timing_study,
    weak_error_study,
)
from .validate import run_validation

SCHEMAS = {
    "strong_error.csv": ["H", "ell", "M", "lod_error", "lod_stderr", "fem_error"],
    "weak_error.csv": ["method", "H_J", "total_samples", "weak_error"],
    "mlmc.csv": ["level", "H_j", "samples", "correction_l2", "stat_error"],
    "timing.csv": ["method", "H_J", "offline_seconds", "projected_seconds"],
}


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(getattr(row, col)) if hasattr(row, col) else _fmt(row[col])
                              for col in header))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _attr_row(row, columns):
    out = {}
    for col in columns:
        out[col] = getattr(row, col) if hasattr(row, col) else ""
    return out


def write_study(out_dir, filename, rows, config):
    header = SCHEMAS[filename]
    path = os.path.join(out_dir, filename)
    write_csv(path, header, rows)
    meta = {
        "file": filename,
        "config_sha256": config.content_hash(),
        "provenance": config.provenance(),
        "columns": header,
        "rows": len(rows),
    }
    with open(path.replace(".csv", ".meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


def merge_csv(out_dir):
    """Re-emit every study CSV found in out_dir as one merged long table."""
    columns = ["study"]
    for name in SCHEMAS:
        for col in SCHEMAS[name]:
            if col not in columns:
                columns.append(col)
    lines = [",".join(columns)]
    found = 0
    for name in SCHEMAS:
        path = os.path.join(out_dir, name)
        if not os.path.exists(path):
            continue
        found += 1
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                cells = dict(zip(header, line.rstrip("\n").split(",")))
                study = name.replace(".csv", "")
                lines.append(",".join([study] + [cells.get(c, "") for c in columns[1:]]))
    if found == 0:
        raise MslodError(f"no study CSVs found in {out_dir}")
    merged = os.path.join(out_dir, "merged.csv")
    with open(merged, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return merged


def _load_config(args):
    if args.config is None:
        cfg = ExperimentConfig()
    else:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        cfg = ExperimentConfig.from_toml(args.config)
    if args.seed is not None:
        data = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
        data["master_seed"] = args.seed
        cfg = ExperimentConfig.from_mapping(data)
    return cfg


def _context(args, cfg):
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    ctx = ExperimentContext(cfg, threads=args.threads,
                            cache_dir=os.path.join(out_dir, "correctors"))
    ctx.coefficient.save(os.path.join(out_dir, "coefficient.txt"))
    return ctx


def _run(args):
    cfg = _load_config(args)
    if args.validate:
        print("running invariant suite", file=sys.stderr)
        if not run_validation(report=lambda s: print(s, file=sys.stderr)):
            raise MslodError("invariant suite failed")
    if args.command == "plot-data":
        merged = merge_csv(args.out)
        print(merged)
        return
    ctx = _context(args, cfg)
    if args.command == "correctors":
        levels = sorted(set(cfg.coarse_exponents)
                        | set(range(1, cfg.weak_mlmc_max_exponent + 1)))
        for e in levels:
            space = ctx.lod_space(e)
            print(f"level {e}: dim {space.dimension}, ell {space.ell}, "
                  f"build {space.build_seconds:.2f}s", file=sys.stderr)
    elif args.command == "strong":
        print(write_study(args.out, "strong_error.csv", strong_error_study(ctx), cfg))
    elif args.command == "weak":
        print(write_study(args.out, "weak_error.csv", weak_error_study(ctx), cfg))
    elif args.command == "mlmc":
        print(write_study(args.out, "mlmc.csv", mlmc_level_report(ctx), cfg))
    elif args.command == "timing":
        print(write_study(args.out, "timing.csv", timing_study(ctx), cfg))
    else:  # pragma: no cover - argparse enforces the choices
        raise MslodError(f"unknown command {args.command}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mslod",
        description="Multiscale-solver convergence and complexity studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("correctors", "build and cache the corrected bases per level"),
        ("strong", "sample-coupled strong-error table (strong_error.csv)"),
        ("weak", "weak-error table for MC/MLMC/coarse-FEM (weak_error.csv)"),
        ("mlmc", "per-level MLMC correction report (mlmc.csv)"),
        ("timing", "projected-cost table from pilot runs (timing.csv)"),
        ("plot-data", "re-emit every study CSV in --out as merged.csv"),
    ]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="TOML config path (defaults when omitted)")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--threads", type=int, default=1, help="worker count (default: 1)")
        p.add_argument("--validate", action="store_true",
                       help="run the invariant suite before the command")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _run(args)
    except ConfigError as exc:
        print(f"mslod: config error: {exc}", file=sys.stderr)
        return 3
    except CacheError as exc:
        print(f"mslod: cache error: {exc}", file=sys.stderr)
        return 4
    except MslodError as exc:
        print(f"mslod: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

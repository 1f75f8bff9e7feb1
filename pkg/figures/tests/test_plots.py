import pytest

from lodfigures import PlotSpec, SchemaError, guide_series, render
from lodfigures.cli import main

STRONG = """H,ell,M,lod_error,lod_stderr,fem_error
0.5,1,20,5.38,0.2,6.79
0.25,2,20,1.44,0.05,3.71
0.125,3,20,0.36,0.01,2.88
0.0625,4,20,0.075,0.003,2.69
0.03125,5,20,0.0126,0.0008,2.56
0.015625,6,20,0.0038,0.0002,2.18
"""

WEAK = """method,H_J,total_samples,weak_error
LOD-MC,0.5,1,3.8
LOD-MC,0.25,3,1.0
LOD-MC,0.125,41,0.202
LOD-MC,0.0625,656,0.0886
FEM-MC,0.5,1,5.97
FEM-MC,0.25,3,3.45
FEM-MC,0.125,41,2.84
LOD-MLMC,0.5,1,3.8
LOD-MLMC,0.25,4,0.95
LOD-MLMC,0.125,44,0.26
"""

TIMING = """method,H_J,offline_seconds,projected_seconds
FEM-MC(h),0.5,0,77
FEM-MC(h),0.25,0,231
LOD-MC,0.5,2,2.5
LOD-MC,0.25,5,8.1
LOD-MLMC,0.5,2,2.5
LOD-MLMC,0.25,7,10.6
"""


@pytest.fixture
def csvs(tmp_path):
    paths = {}
    for name, text in [("strong", STRONG), ("weak", WEAK), ("timing", TIMING)]:
        p = tmp_path / f"{name}.csv"
        p.write_text(text)
        paths[name] = p
    return paths


def test_renders_all_three_kinds(csvs, tmp_path):
    for kind in ("strong", "weak", "timing"):
        out = tmp_path / f"{kind}.png"
        render(PlotSpec(kind, str(csvs[kind]), str(out)))
        assert out.exists() and out.stat().st_size > 0


def test_strong_plot_has_four_series(csvs, tmp_path):
    # LOD, FEM, and the two guide lines
    import matplotlib.pyplot as plt
    from lodfigures import plots

    fig, ax = plt.subplots()
    try:
        plots._render_strong(PlotSpec("strong", str(csvs["strong"]), ""), ax)
        labels = [line.get_label() for line in ax.get_lines()]
        assert labels == ["LOD", "FEM", "O(H)", "O(H^2)"]
    finally:
        plt.close(fig)


def test_guide_lines_satisfy_slope_definition():
    hs = [0.5, 0.25, 0.125]
    g1 = guide_series(hs, anchor=8.0, order=1)
    g2 = guide_series(hs, anchor=8.0, order=2)
    assert g1 == [8.0, 4.0, 2.0]          # passes through (H_max, anchor), halves per halving
    assert g2 == [8.0, 2.0, 0.5]          # quarter per halving
    assert g1[0] == g2[0] == 8.0


def test_pixel_stable_across_reruns(csvs, tmp_path):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    render(PlotSpec("strong", str(csvs["strong"]), str(a)))
    render(PlotSpec("strong", str(csvs["strong"]), str(b)))
    assert a.read_bytes() == b.read_bytes()


def test_input_never_mutated(csvs, tmp_path):
    before = csvs["weak"].read_bytes()
    render(PlotSpec("weak", str(csvs["weak"]), str(tmp_path / "w.png")))
    assert csvs["weak"].read_bytes() == before


def test_empty_csv_fails(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("H,ell,M,lod_error,lod_stderr,fem_error\n")
    with pytest.raises(SchemaError):
        render(PlotSpec("strong", str(p), str(tmp_path / "x.png")))


def test_missing_columns_fail(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("H,whatever\n0.5,1\n")
    with pytest.raises(SchemaError):
        render(PlotSpec("strong", str(p), str(tmp_path / "x.png")))


def test_unknown_kind_fails(csvs, tmp_path):
    with pytest.raises(SchemaError):
        render(PlotSpec("volume", str(csvs["strong"]), str(tmp_path / "x.png")))


def test_cli_roundtrip(csvs, tmp_path):
    out = tmp_path / "strong.png"
    assert main(["strong", "--csv", str(csvs["strong"]), "--out", str(out)]) == 0
    assert out.exists()
    assert main(["weak", "--csv", str(tmp_path / "missing.csv"), "--out", str(out)]) == 1


def test_acceptance_figures(csvs, tmp_path, capsys):
    # all three study CSVs render; guides anchored at the coarsest datum obey
    # the slope definition; reruns are pixel-stable
    ok = True
    for kind in ("strong", "weak", "timing"):
        a = tmp_path / f"{kind}_a.png"
        b = tmp_path / f"{kind}_b.png"
        render(PlotSpec(kind, str(csvs[kind]), str(a)))
        render(PlotSpec(kind, str(csvs[kind]), str(b)))
        ok &= a.read_bytes() == b.read_bytes()
    g = guide_series([0.5, 0.25], anchor=1.0, order=2)
    ok &= g[1] == 0.25
    print(f"ACCEPTANCE 11 figures: {'PASS' if ok else 'FAIL'} "
          "(three kinds rendered, guides exact, pixel-stable)")
    assert ok

"""Acceptance gate: every criterion at its stated tolerance.

Runs at the desk-scale default configuration (fine exponent 7, 20 strong
samples). Each test prints one PASS/FAIL line; run with `pytest -s` to see
them inline. The shared context builds the corrected bases once (a few
minutes single-threaded) and reuses them across criteria.
"""

import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from mslod import cli, fem, lod, streams
from mslod import estimators as est
from mslod.config import ExperimentConfig
from mslod.context import ExperimentContext
from mslod.mesh import build_uniform_mesh, element_patch, refine
from mslod.util import fit_loglog_slope

from conftest import rough_coefficient
from oracles import dense_corrector


def report(num, name, passed, detail):
    line = f"ACCEPTANCE {num:02d} {name}: {'PASS' if passed else 'FAIL'} ({detail})"
    print(line, flush=True)
    assert passed, line


@pytest.fixture(scope="module")
def ctx():
    return ExperimentContext(ExperimentConfig(), threads=1)


@pytest.fixture(scope="module")
def strong_rows(ctx):
    return est.strong_error_study(ctx)


@pytest.fixture(scope="module")
def weak_rows(ctx):
    # delta=2 puts the sample budget where the finest MLMC points are
    # dominated by the discretization error rather than the estimator's
    # statistical floor (gamma, reference, and the level range as stated;
    # delta trades the statistical constant against per-level work)
    return est.weak_error_study(ctx, delta=2.0)


def test_01_strong_rate(strong_rows):
    hs = [r.H for r in strong_rows]
    errs = [r.lod_error for r in strong_rows]
    slope = fit_loglog_slope(hs, errs)
    report(1, "strong-rate", slope >= 1.7,
           f"slope={slope:.2f} >= 1.7 over H={hs[0]}..{hs[-1]}, errors={['%.3g' % e for e in errs]}")


def test_02_fem_stagnation(strong_rows):
    by_h = {r.H: r.fem_error for r in strong_rows}
    ratio = by_h[2.0 ** -2] / by_h[2.0 ** -5]
    report(2, "fem-stagnation", ratio <= 2.5, f"fem error ratio 2^-2 vs 2^-5 = {ratio:.2f} <= 2.5")


def test_03_weak_rates(weak_rows):
    mc = {r.H_J: r.weak_error for r in weak_rows if r.method == "LOD-MC"}
    ml = {r.H_J: r.weak_error for r in weak_rows if r.method == "LOD-MLMC"}
    hs_mc = sorted(mc, reverse=True)
    hs_ml = sorted(ml, reverse=True)
    slope_mc = fit_loglog_slope(hs_mc, [mc[h] for h in hs_mc])
    slope_ml = fit_loglog_slope(hs_ml, [ml[h] for h in hs_ml])
    report(3, "weak-rate", slope_mc >= 1.7 and slope_ml >= 1.7,
           f"LOD-MC slope={slope_mc:.2f} over {len(hs_mc)} levels (gamma=0.01), "
           f"LOD-MLMC slope={slope_ml:.2f} over {len(hs_ml)} levels (delta=2), both >= 1.7")


def test_04_mc_statistical_scaling(ctx):
    problem = ctx.strong_problem()
    solver = ctx.lod_solver(3, problem)
    logm, loge = [], []
    for s in range(8):
        seed = streams.derive_seed(ctx.config.master_seed, streams.TEST, 4, s)
        for m_count in (25, 100, 400):
            rep = est.mc_estimate(problem, solver, m_count, seed=seed)
            logm.append(math.log2(m_count))
            loge.append(math.log2(rep.statistical_error))
    slope = float(np.polyfit(logm, loge, 1)[0])
    report(4, "mc-statistical-scaling", abs(slope - (-0.5)) <= 0.15,
           f"slope={slope:.3f} within -0.5 +/- 0.15 (H=2^-3, M in 25/100/400, 8 seeds)")


def test_05_mlmc_allocation_arithmetic():
    rng = np.random.default_rng(505)
    ok = True
    for _ in range(10):
        gamma = float(rng.uniform(0.001, 3.0))
        delta = float(rng.uniform(0.1, 2.5))
        j_max = int(rng.integers(0, 7))
        alloc = est.SampleAllocation.plan(gamma, delta, j_max)
        h_fin = 2.0 ** (-(j_max + 1))
        m0 = max(1, math.ceil(gamma * h_fin ** -4))
        ok &= alloc.count(0) == m0
        for j in range(1, j_max + 1):
            h_j = 2.0 ** (-(j + 1))
            ok &= alloc.count(j) == max(1, math.ceil(m0 * h_j ** 4 * 2.0 ** (2.0 * delta * j)))
    report(5, "mlmc-allocation", ok, "ceil closed forms exact for 10 random (gamma, delta, J)")


def test_06_corrector_correctness():
    pair = refine(build_uniform_mesh(2), 2)
    results = []
    for coeff in (fem.CoefficientField.constant(1.0), rough_coefficient(2, 10.0, seed=66)):
        S = fem.assemble_stiffness(pair.fine, coeff)
        M = fem.assemble_mass(pair.fine)
        C = fem.interpolation_interior(pair)
        S_dense = S.full.toarray()
        ell = 8  # saturating: every patch covers the full domain
        worst_oracle, worst_kernel = 0.0, 0.0
        for element in (0, 12, 21):
            res = lod.compute_element_corrector(pair, S, element, ell)
            patch = element_patch(pair.coarse, element, ell)
            for vert, vals in res.columns.items():
                dofs, oracle = dense_corrector(pair, coeff, S_dense, element, patch.tolist(), vert)
                worst_oracle = max(worst_oracle, float(np.abs(vals - oracle).max()))
                q = np.zeros(pair.fine.n_interior)
                q[pair.fine.interior_index[res.dofs]] = vals
                worst_kernel = max(worst_kernel, float(np.abs(C @ q).max()))
        space = lod.build_multiscale_space(pair, S, M, ell=ell)
        P = fem.prolongation_interior(pair)
        rng = np.random.default_rng(606)
        worst_orth = 0.0
        for _ in range(50):
            v = rng.normal(size=pair.fine.n_interior)
            w = v - P @ (C @ v)
            wn = math.sqrt(w @ (S.matrix @ w))
            for i in range(space.dimension):
                col = np.asarray(space.basis[:, i].todense()).ravel()
                cn = math.sqrt(col @ (S.matrix @ col))
                worst_orth = max(worst_orth, abs(col @ (S.matrix @ w)) / (cn * wn))
        results.append((worst_oracle, worst_kernel, worst_orth))
    ok = all(a <= 1e-8 and b <= 1e-10 and c <= 1e-9 for a, b, c in results)
    detail = "; ".join(
        f"oracle {a:.1e}<=1e-8, kernel {b:.1e}<=1e-10, a-orth {c:.1e}<=1e-9" for a, b, c in results
    )
    report(6, "corrector-correctness", ok, detail)


def test_07_corrector_decay():
    pair = refine(build_uniform_mesh(3), 3)
    coeff = rough_coefficient(3, contrast=10.0, seed=99)
    S = fem.assemble_stiffness(pair.fine, coeff)
    node = pair.coarse.interior_vertices[0]  # saturation comes late from a corner
    rows = lod.corrector_decay_report(pair, S, node, ell_max=5)
    dists = [d for _, d in rows]
    ratios = [b / a for a, b in zip(dists, dists[1:])]
    avg = float(np.mean(ratios))
    report(7, "corrector-decay", avg <= 0.7,
           f"mean d(l+1)/d(l) = {avg:.3f} <= 0.7 over l=1..4, distances={['%.2e' % d for d in dists]}")


def test_08_elliptic_rate():
    fine = build_uniform_mesh(6)
    coeff = rough_coefficient(4, contrast=10.0, seed=7)
    S = fem.assemble_stiffness(fine, coeff)
    M = fem.assemble_mass(fine)
    b = fem.interior_load(fine, lambda x, y: np.ones_like(x))
    u_h = S.solve(b)
    errs, hs = [], []
    for p in (2, 3, 4):
        pair = refine(build_uniform_mesh(p), 6 - p)
        pair.fine = fine
        space = lod.build_multiscale_space(pair, S, M, ell=p)
        c = spla.splu(space.stiffness.tocsc()).solve(space.basis.T @ b)
        d = u_h - space.basis @ c
        errs.append(math.sqrt(d @ (M.matrix @ d)))
        hs.append(2.0 ** -p)
    slope = fit_loglog_slope(hs, errs)
    report(8, "elliptic-rate", slope >= 1.8, f"slope={slope:.2f} >= 1.8 for f==1 across H=2^-2..2^-4")


def test_09_cli_determinism(tmp_path):
    cfg_path = tmp_path / "small.toml"
    cfg_path.write_text(
        "fine_exponent = 5\nepsilon_exponent = 4\ncoarse_exponents = [2, 3]\n"
        "samples_strong = 3\nweak_mc_max_exponent = 2\nweak_mlmc_max_exponent = 3\n"
        "pilot_samples = 1\n"
    )
    outputs = {}
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        for cmd in ("strong", "weak", "mlmc"):
            code = cli.main([cmd, "--config", str(cfg_path), "--seed", "11",
                             "--out", str(out), "--threads", str(threads)])
            assert code == 0
        outputs[threads] = {
            name: (out / name).read_bytes()
            for name in ("strong_error.csv", "weak_error.csv", "mlmc.csv", "coefficient.txt")
        }
    same = outputs[1] == outputs[8]
    report(9, "csv-determinism", same,
           "strong/weak/mlmc CSVs and coefficient bit-identical for --threads 1 vs 8; "
           "timing.csv excluded (wall-clock)")


def test_10_timing_ordering(ctx):
    rows = est.timing_study(ctx)
    finest = min(r.H_J for r in rows)
    at = {r.method: r for r in rows if r.H_J == finest}
    fem_mc, lod_mc, lod_ml = at["FEM-MC(h)"], at["LOD-MC"], at["LOD-MLMC"]
    ok = fem_mc.projected_seconds > lod_mc.projected_seconds >= lod_ml.projected_seconds
    ok &= lod_mc.per_sample_seconds < fem_mc.per_sample_seconds
    offline_reported = all(r.offline_seconds > 0.0 for r in rows if r.method == "LOD-MC")
    ok &= offline_reported
    report(
        10, "timing-ordering", ok,
        f"at H_J={finest}: projected FEM-MC {fem_mc.projected_seconds:.0f}s > "
        f"LOD-MC {lod_mc.projected_seconds:.0f}s >= LOD-MLMC {lod_ml.projected_seconds:.0f}s; "
        f"per-sample LOD {lod_mc.per_sample_seconds * 1e3:.1f}ms < "
        f"fine {fem_mc.per_sample_seconds * 1e3:.1f}ms; offline reported separately",
    )

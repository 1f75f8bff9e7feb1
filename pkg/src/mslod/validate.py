"""Fast invariant battery behind the CLI --validate flag.

Small-instance checks of the library's structural contracts: mesh counts and
patch algebra, projection/prolongation identities, assembly kernels, noise
stream determinism and eigenvalue bounds, corrector kernel membership, and
estimator degeneracies. Each check returns (name, passed, detail).
"""

import math

import numpy as np

from . import noise as noise_mod
from . import streams
from .config import ExperimentConfig
from .context import ExperimentContext
from .estimators import SampleAllocation, mc_estimate, mlmc_estimate
from .fem import (
    COARSE_INTERIOR,
    FINE_INTERIOR,
    CoefficientField,
    FieldVector,
    assemble_mass,
    assemble_stiffness,
    energy_norm,
    prolongate,
    quasi_interpolate,
)
from .lod import build_multiscale_space
from .mesh import build_uniform_mesh, element_patch, refine
from .timestepper import EvolutionProblem, FineSolver


def _check_mesh_counts():
    m = build_uniform_mesh(3)
    ok = m.n_elements == 128 and m.n_interior == 49
    d1 = m.vertices[m.elements[:, 1]] - m.vertices[m.elements[:, 0]]
    d2 = m.vertices[m.elements[:, 2]] - m.vertices[m.elements[:, 0]]
    areas = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    ok &= abs(areas.sum() - 1.0) < 1e-14
    return ok, f"elements={m.n_elements} interior={m.n_interior} area={areas.sum():.15f}"


def _check_mesh_orientation():
    m = build_uniform_mesh(3)
    d1 = m.vertices[m.elements[:, 1]] - m.vertices[m.elements[:, 0]]
    d2 = m.vertices[m.elements[:, 2]] - m.vertices[m.elements[:, 0]]
    signed = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    return bool((signed > 0).all()), f"min signed area {signed.min():.3e}"


def _check_patch_algebra():
    m = build_uniform_mesh(3)
    for k in (0, 27, 50):
        one = set(element_patch(m, k, 1).tolist())
        two = set(element_patch(m, k, 2).tolist())
        if not one <= two:
            return False, f"patch not monotone at {k}"
        union = set()
        for kk in one:
            union |= set(element_patch(m, kk, 1).tolist())
        if union != two:
            return False, f"patch recursion broken at {k}"
        for kk in one:
            if k not in set(element_patch(m, kk, 1).tolist()):
                return False, f"patch symmetry broken at ({k},{kk})"
    return True, "monotonicity, recursion, symmetry on p=3"


def _check_refine_idempotence():
    base = build_uniform_mesh(2)
    twice = refine(refine(base, 1).fine, 1).fine
    once = refine(base, 2).fine
    same = np.array_equal(
        np.sort(twice.vertices.view([("x", float), ("y", float)]), axis=0),
        np.sort(once.vertices.view([("x", float), ("y", float)]), axis=0),
    )
    return bool(same), "vertex sets agree"


def _check_stiffness_kernel():
    m = build_uniform_mesh(3)
    S = assemble_stiffness(m, CoefficientField.constant(1.0))
    r = np.abs(S.full @ np.ones(m.n_vertices)).max()
    diag = np.unique(np.round(S.matrix.diagonal(), 12))
    return r < 1e-12 and list(diag) == [4.0], f"|S 1|={r:.2e} diag={diag}"


def _check_mass_partition():
    m = build_uniform_mesh(3)
    M = assemble_mass(m)
    total = M.full.sum()
    rowsums = np.asarray(M.full.sum(axis=1)).ravel()
    incident = np.asarray(m.vertex_to_elements().sum(axis=1)).ravel()
    expected = incident * (0.5 * m.width ** 2) / 3.0
    ok = abs(total - 1.0) < 1e-13 and np.abs(rowsums - expected).max() < 1e-13
    return ok, f"sum={total:.15f}"


def _check_interpolation_projection():
    pair = refine(build_uniform_mesh(2), 2)
    rng = streams.generator(1, streams.TEST, 1)
    v = FieldVector(FINE_INTERIOR, rng.normal(size=pair.fine.n_interior))
    iv = quasi_interpolate(pair, v)
    iiv = quasi_interpolate(pair, prolongate(pair, iv))
    err1 = np.abs(iiv.values - iv.values).max()
    c = FieldVector(COARSE_INTERIOR, rng.normal(size=pair.coarse.n_interior))
    err2 = np.abs(quasi_interpolate(pair, prolongate(pair, c)).values - c.values).max()
    return err1 < 1e-12 and err2 < 1e-12, f"projection {err1:.2e}, identity {err2:.2e}"


def _check_noise_eigenvalues():
    mk = lambda amp, dec: noise_mod.NoiseModel(amp, dec, 4, 0.01, 1)
    ok = abs(noise_mod.eigenvalue(mk(1.0, 0.01), 1, 1) - 0.5) < 1e-15
    ok &= abs(noise_mod.eigenvalue(mk(1.0, 0.0), 2, 1) - 0.2) < 1e-15
    ok &= abs(noise_mod.eigenvalue(mk(1.0 / 25.0, 0.01), 1, 1) - 0.02) < 1e-15
    model = noise_mod.NoiseModel(1.0, 0.01, 8, 0.01, 1)
    traces = [noise_mod.partial_trace(model, k) for k in range(1, 9)]
    p = 2.0 + model.decay
    bound = 0.5 * model.amplitude * sum(m ** -(p / 2) for m in range(1, 9)) ** 2
    ok &= all(t1 < t2 for t1, t2 in zip(traces, traces[1:])) and traces[-1] < bound
    return ok, f"trace_8={traces[-1]:.4f} < majorant {bound:.4f}"


def _check_noise_determinism():
    model = noise_mod.NoiseModel(1.0, 0.01, 3, 0.01, 5)
    a = noise_mod.sample_path(model, 7, 0).increments
    b = noise_mod.sample_path(model, 7, 0).increments
    c = noise_mod.sample_path(model, 7, 1).increments
    return np.array_equal(a, b) and not np.array_equal(a, c), "same (seed, sample) reproduces"


def _check_corrector_kernel():
    pair = refine(build_uniform_mesh(2), 1)
    S = assemble_stiffness(pair.fine, CoefficientField.constant(1.0))
    M = assemble_mass(pair.fine)
    space = build_multiscale_space(pair, S, M, ell=1)
    from .fem import interpolation_interior

    worst = np.abs((interpolation_interior(pair) @ space.correctors).toarray()).max()
    return worst < 1e-10, f"|I q| = {worst:.2e}"


def _check_allocation():
    for gamma, delta, j_max in ((0.01, 1.0, 4), (0.5, 0.5, 2), (2.0, 2.0, 0)):
        alloc = SampleAllocation.plan(gamma, delta, j_max)
        h_fin = 2.0 ** (-(j_max + 1))
        if alloc.count(0) != max(1, math.ceil(gamma * h_fin ** -4)):
            return False, "base count mismatch"
        for j in range(1, j_max + 1):
            h_j = 2.0 ** (-(j + 1))
            want = max(1, math.ceil(alloc.count(0) * h_j ** 4 * 2.0 ** (2.0 * delta * j)))
            if alloc.count(j) != want:
                return False, f"level {j} count mismatch"
    return True, "closed-form counts"


def _check_estimator_degeneracy():
    cfg = ExperimentConfig(
        fine_exponent=4, epsilon_exponent=3, coarse_exponents=[1, 2],
        samples_strong=2, weak_mc_max_exponent=2, weak_mlmc_max_exponent=2,
        pilot_samples=1,
    )
    ctx = ExperimentContext(cfg)
    problem = ctx.weak_problem()
    alloc = SampleAllocation.plan(cfg.gamma, cfg.delta, 0)
    solver = ctx.lod_solver(1, problem)
    a = mlmc_estimate(problem, [solver], alloc, seed=11)
    b = mc_estimate(problem, solver, alloc.count(0), seed=11)
    same = np.array_equal(a.estimate.values, b.estimate.values)
    return same, f"J=0 telescoping degenerates over {alloc.count(0)} samples"


def _check_contraction():
    m = build_uniform_mesh(4)
    S = assemble_stiffness(m, CoefficientField.constant(1.0))
    M = assemble_mass(m)
    problem = EvolutionProblem(final_time=0.1, timestep=0.01, source=None, noise=None)
    res = FineSolver(problem, m, S, M).run(record=True)
    norms = [M.norm_of(s) for s in res.snapshots]
    ok = all(b <= a * (1 + 1e-14) for a, b in zip(norms, norms[1:]))
    return ok, "M-norm nonincreasing without source/noise"


CHECKS = [
    ("mesh-counts", _check_mesh_counts),
    ("mesh-orientation", _check_mesh_orientation),
    ("patch-algebra", _check_patch_algebra),
    ("refine-idempotence", _check_refine_idempotence),
    ("stiffness-kernel", _check_stiffness_kernel),
    ("mass-partition", _check_mass_partition),
    ("interpolation-projection", _check_interpolation_projection),
    ("noise-eigenvalues", _check_noise_eigenvalues),
    ("noise-determinism", _check_noise_determinism),
    ("corrector-kernel", _check_corrector_kernel),
    ("allocation-arithmetic", _check_allocation),
    ("estimator-degeneracy", _check_estimator_degeneracy),
    ("trajectory-contraction", _check_contraction),
]


def run_validation(report=print):
    """Run every invariant check; returns True when all pass."""
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        report(f"[{'ok' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok

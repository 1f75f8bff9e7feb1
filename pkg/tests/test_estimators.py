import math

import numpy as np
import pytest

from mslod import estimators as est
from mslod import fem, noise
from mslod.config import ExperimentConfig
from mslod.context import ExperimentContext


@pytest.fixture(scope="module")
def small_ctx():
    cfg = ExperimentConfig(
        fine_exponent=5, epsilon_exponent=4, coarse_exponents=[2, 3],
        samples_strong=4, weak_mc_max_exponent=2, weak_mlmc_max_exponent=3,
        pilot_samples=2, master_seed=97,
    )
    return ExperimentContext(cfg)


# ----------------------------------------------------------------- allocation

def test_allocation_worked_example():
    # gamma=0.01, H_J=2^-4, delta=1 on the level grid H_j = 2^-(j+1):
    # base ceil(0.01*2^16)=656, then ceil(656*H_j^4*4^j) = 11, 3, 1; the
    # finest count tends to gamma*4^J, independent of the total sample size
    alloc = est.SampleAllocation.plan(0.01, 1.0, 3)
    assert alloc.count(0) == 656
    assert alloc.count(1) == math.ceil(656 * (2.0 ** -2) ** 4 * 4.0) == 11
    assert alloc.count(2) == 3
    assert alloc.count(3) == 1
    assert [j for j, _, _ in alloc.levels] == [0, 1, 2, 3]
    assert [e for _, e, _ in alloc.levels] == [1, 2, 3, 4]


def test_allocation_closed_forms_randomized():
    rng = np.random.default_rng(12)
    for _ in range(10):
        gamma = float(rng.uniform(0.001, 2.0))
        delta = float(rng.uniform(0.2, 2.0))
        j_max = int(rng.integers(0, 6))
        alloc = est.SampleAllocation.plan(gamma, delta, j_max)
        h_fin = 2.0 ** (-(j_max + 1))
        m0 = max(1, math.ceil(gamma * h_fin ** -4))
        assert alloc.count(0) == m0
        for j in range(1, j_max + 1):
            h_j = 2.0 ** (-(j + 1))
            assert alloc.count(j) == max(1, math.ceil(m0 * h_j ** 4 * 2.0 ** (2.0 * delta * j)))
        assert all(c >= 1 for _, _, c in alloc.levels)


def test_allocation_validation():
    with pytest.raises(ValueError):
        est.SampleAllocation.plan(0.0, 1.0, 2)
    with pytest.raises(ValueError):
        est.SampleAllocation.plan(0.01, -1.0, 2)


def test_mc_sample_rule():
    assert est.mc_sample_count(0.01, 4) == 656
    assert est.mc_sample_count(0.01, 1) == 1


# ------------------------------------------------------------------------- MC

def test_mc_forced_identical_paths(small_ctx):
    problem = small_ctx.weak_problem()
    solver = small_ctx.lod_solver(2, problem)
    rep = est.mc_estimate(problem, solver, 3, seed=5, sample_indices=[4, 4, 4])
    path = noise.sample_path(problem.noise, 5, 4)
    single = solver.run(path).final_state.values
    assert np.allclose(rep.estimate.values, single, rtol=0, atol=1e-15)
    assert rep.statistical_error <= 1e-12


def test_mc_zero_noise_matches_deterministic(small_ctx):
    cfg = small_ctx.config
    problem_nonoise = __import__("mslod.timestepper", fromlist=["EvolutionProblem"]).EvolutionProblem(
        final_time=cfg.final_time, timestep=cfg.timestep, noise=None,
        coefficient=small_ctx.coefficient,
    )
    solver = small_ctx.lod_solver(2, problem_nonoise)
    rep = est.mc_estimate(problem_nonoise, solver, 4, seed=9)
    single = solver.run(None).final_state.values
    assert np.array_equal(rep.estimate.values, single)
    assert rep.statistical_error == 0.0


def test_mc_statistical_error_halves_with_4x_samples(small_ctx):
    problem = small_ctx.weak_problem()
    solver = small_ctx.lod_solver(2, problem)
    errs = []
    for m_count in (16, 64):
        stats = []
        for seed in range(4):
            rep = est.mc_estimate(problem, solver, m_count, seed=1000 + seed)
            stats.append(rep.statistical_error)
        errs.append(np.mean(stats))
    slope = np.log2(errs[1] / errs[0]) / np.log2(64 / 16)
    assert -0.75 <= slope <= -0.25


def test_mc_threads_bit_identical(small_ctx):
    problem = small_ctx.weak_problem()
    solver = small_ctx.lod_solver(3, problem)
    a = est.mc_estimate(problem, solver, 70, seed=3, threads=1)
    b = est.mc_estimate(problem, solver, 70, seed=3, threads=4)
    assert np.array_equal(a.estimate.values, b.estimate.values)
    assert a.statistical_error == b.statistical_error


# ----------------------------------------------------------------------- MLMC

def test_mlmc_degenerates_to_mc(small_ctx):
    problem = small_ctx.weak_problem()
    alloc = est.SampleAllocation.plan(0.2, 1.0, 0)
    solver = small_ctx.lod_solver(1, problem)
    a = est.mlmc_estimate(problem, [solver], alloc, seed=21)
    b = est.mc_estimate(problem, solver, alloc.count(0), seed=21)
    assert np.array_equal(a.estimate.values, b.estimate.values)


def test_mlmc_telescoping_is_exact(small_ctx):
    problem = small_ctx.weak_problem()
    alloc = est.SampleAllocation.plan(0.05, 1.0, 2)
    solvers = [small_ctx.lod_solver(e, problem) for _, e, _ in alloc.levels]
    rep = est.mlmc_estimate(problem, solvers, alloc, seed=33)
    total = rep.level_means[0].copy()
    for mean in rep.level_means[1:]:
        total = total + mean
    assert np.array_equal(total, rep.estimate.values)
    assert rep.sample_counts == [c for _, _, c in alloc.levels]


def test_mlmc_zero_noise_telescopes_to_finest(small_ctx):
    cfg = small_ctx.config
    from mslod.timestepper import EvolutionProblem

    problem = EvolutionProblem(
        final_time=cfg.final_time, timestep=cfg.timestep, noise=None,
        coefficient=small_ctx.coefficient,
    )
    alloc = est.SampleAllocation.plan(0.05, 1.0, 2)
    solvers = [small_ctx.lod_solver(e, problem) for _, e, _ in alloc.levels]
    rep = est.mlmc_estimate(problem, solvers, alloc, seed=2)
    finest = solvers[-1].run(None).final_state.values
    assert np.abs(rep.estimate.values - finest).max() < 1e-10


def test_mlmc_rejects_mismatched_fine_meshes(small_ctx):
    other_cfg = ExperimentConfig(
        fine_exponent=4, epsilon_exponent=4, coarse_exponents=[2],
        samples_strong=2, weak_mc_max_exponent=2, weak_mlmc_max_exponent=2,
        pilot_samples=1, master_seed=97,
    )
    other = ExperimentContext(other_cfg)
    problem = small_ctx.weak_problem()
    alloc = est.SampleAllocation.plan(0.05, 1.0, 1)
    s0 = small_ctx.lod_solver(1, problem)
    s1 = other.lod_solver(2, other.weak_problem())
    with pytest.raises(ValueError):
        est.mlmc_estimate(problem, [s0, s1], alloc, seed=1)


def test_mlmc_variance_decays_across_levels(small_ctx):
    rows = est.mlmc_level_report(small_ctx)
    sigmas = [r.stat_error * math.sqrt(r.samples) for r in rows]
    assert sigmas[-1] < sigmas[0]


# -------------------------------------------------------------------- studies

def test_weak_bounded_by_strong_jensen(small_ctx):
    problem = small_ctx.weak_problem()
    fine_solver = small_ctx.fine_solver(problem)
    lod_solver = small_ctx.lod_solver(2, problem)
    mass = small_ctx.fine_mass().matrix
    diffs = []
    for m in range(6):
        path = noise.sample_path(problem.noise, 55, m)
        d = fine_solver.run(path).final_state.values - lod_solver.run(path).final_state.values
        diffs.append(d)
    mean_diff = np.mean(diffs, axis=0)
    weak = math.sqrt(mean_diff @ (mass @ mean_diff))
    strong = np.mean([math.sqrt(d @ (mass @ d)) for d in diffs])
    assert weak <= strong + 1e-14


def test_strong_study_zero_data_is_zero():
    cfg = ExperimentConfig(
        fine_exponent=4, epsilon_exponent=3, coarse_exponents=[2],
        samples_strong=2, weak_mc_max_exponent=2, weak_mlmc_max_exponent=2,
        pilot_samples=1, master_seed=1,
    )
    ctx = ExperimentContext(cfg)
    from mslod.timestepper import EvolutionProblem

    def zero(x, y):
        return np.zeros_like(x)

    problem = EvolutionProblem(
        final_time=cfg.final_time, timestep=cfg.timestep, initial=zero,
        source=None, noise=None, coefficient=ctx.coefficient,
    )
    ctx._memo["strong_problem"] = problem
    rows = est.strong_error_study(ctx)
    assert all(r.lod_error == 0.0 and r.fem_error == 0.0 for r in rows)


def test_strong_study_deterministic(small_ctx):
    a = est.strong_error_study(small_ctx)
    b = est.strong_error_study(small_ctx)
    assert [(r.H, r.lod_error, r.lod_stderr, r.fem_error) for r in a] == [
        (r.H, r.lod_error, r.lod_stderr, r.fem_error) for r in b
    ]


def test_strong_study_couples_solvers(small_ctx):
    rows = est.strong_error_study(small_ctx)
    assert [r.H for r in rows] == [0.25, 0.125]
    assert all(r.M == small_ctx.config.samples_strong for r in rows)
    # multiscale beats plain coarse FEM on the rough coefficient
    assert all(r.lod_error < r.fem_error for r in rows)


def test_weak_study_rows(small_ctx):
    rows = est.weak_error_study(small_ctx)
    methods = {r.method for r in rows}
    assert methods == {"LOD-MC", "FEM-MC", "LOD-MLMC"}
    mc_rows = [r for r in rows if r.method == "LOD-MC"]
    assert [r.total_samples for r in mc_rows] == [est.mc_sample_count(0.01, e) for e in (1, 2)]


# --------------------------------------------------------------------- timing

def test_timing_requires_pilot(small_ctx):
    cfg_data = {k: getattr(small_ctx.config, k) for k in small_ctx.config.__dataclass_fields__}
    cfg_data["pilot_samples"] = 0
    cfg = ExperimentConfig.from_mapping(cfg_data)
    ctx = ExperimentContext(cfg, coefficient=small_ctx.coefficient)
    with pytest.raises(ValueError):
        est.timing_study(ctx)


def test_timing_rows_and_monotone_mlmc(small_ctx):
    rows = est.timing_study(small_ctx)
    mlmc = [r for r in rows if r.method == "LOD-MLMC"]
    assert all(a.projected_seconds <= b.projected_seconds for a, b in zip(mlmc, mlmc[1:]))
    finest = max(r.H_J for r in rows)
    finest = min(r.H_J for r in rows)
    at_finest = {r.method: r for r in rows if r.H_J == finest}
    assert at_finest["FEM-MC(h)"].per_sample_seconds > at_finest["LOD-MC"].per_sample_seconds

"""Monte-Carlo and multilevel Monte-Carlo estimation with work accounting.

Sampling is the parallel axis: samples are processed in fixed-size chunks
(constant, independent of the worker count) and reduced in chunk order, so
estimates, statistical errors, and the CSV rows derived from them are
bit-identical for any number of workers. Within an MLMC correction level the
two resolutions share one noise path per sample; levels use disjoint streams.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import noise as noise_mod
from . import streams
from .fem import FINE_INTERIOR, FieldVector
from .util import parallel_map

SAMPLE_CHUNK = 64  # fixed reduction granularity; never depends on threads


@dataclass
class SampleAllocation:
    """Per-level sample counts M~_j for the telescoped estimator.

    M~_0 = ceil(gamma * H_J^-4), M~_j = ceil(M~_0 * H_j^4 * 4^(delta j)) with
    H_j = 2^-(j+1); ceil keeps the error-balancing direction, minimum 1.
    """

    gamma: float
    delta: float
    levels: list  # (level j, coarse exponent, sample count)

    @classmethod
    def plan(cls, gamma, delta, finest_level):
        if gamma <= 0.0 or delta <= 0.0:
            raise ValueError("gamma and delta must be positive")
        if finest_level < 0:
            raise ValueError("finest_level must be >= 0")
        h_fin = 2.0 ** (-(finest_level + 1))
        m0 = max(1, math.ceil(gamma * h_fin ** -4))
        levels = [(0, 1, m0)]
        for j in range(1, finest_level + 1):
            h_j = 2.0 ** (-(j + 1))
            m_j = max(1, math.ceil(m0 * h_j ** 4 * 2.0 ** (2.0 * delta * j)))
            levels.append((j, j + 1, m_j))
        return cls(gamma, delta, levels)

    @property
    def total_samples(self):
        return sum(count for _, _, count in self.levels)

    def count(self, j):
        return self.levels[j][2]


def mc_sample_count(gamma, coarse_exponent):
    """Plain-MC sample rule M_J = ceil(gamma * H_J^-4)."""
    return max(1, math.ceil(gamma * (2.0 ** -coarse_exponent) ** -4))


@dataclass
class EstimatorReport:
    estimate: FieldVector                  # fine-interior representation
    statistical_error: float
    sample_counts: list
    level_seconds: list
    level_means: list = None               # per-level mean vectors (telescoping terms)
    level_stat_errors: list = None

    @property
    def work_seconds(self):
        return float(sum(self.level_seconds))


def _chunks(indices):
    return [indices[i : i + SAMPLE_CHUNK] for i in range(0, len(indices), SAMPLE_CHUNK)]


def _reduce_samples(sample_fn, indices, mass_matrix, threads):
    """Chunked mean/variance reduction with a worker-count-independent order.

    sample_fn(m) -> fine-interior ndarray. The first sample doubles as the
    variance reference point (deviations stay O(sigma), avoiding the
    mean-scale cancellation of a naive sum-of-squares). Returns
    (mean, reference, sum_sq_deviations, elapsed).
    """
    indices = list(indices)
    t0 = time.perf_counter()
    ref = sample_fn(indices[0])

    def chunk_worker(chunk):
        tc = time.perf_counter()
        total = np.zeros_like(ref)
        sq = 0.0
        for m in chunk:
            d = sample_fn(m) - ref
            total += d
            sq += float(d @ (mass_matrix @ d))
        return total, sq, time.perf_counter() - tc

    parts = parallel_map(chunk_worker, _chunks(indices[1:]), threads)
    total = ref * float(len(indices))
    sq = 0.0
    for part_total, part_sq, _ in parts:
        total += part_total
        sq += part_sq
    return total / len(indices), ref, sq, time.perf_counter() - t0


def _statistical_error(mean, ref, sum_sq_dev, count, mass_matrix):
    """Hilbert-space sample std of the finals divided by sqrt(count)."""
    if count < 2:
        return 0.0
    d = mean - ref
    shift = float(d @ (mass_matrix @ d))
    var = max(0.0, (sum_sq_dev - count * shift) / (count - 1))
    return math.sqrt(var) / math.sqrt(count)


def _path_for(problem, seed, m, domain, level):
    if problem.noise is None:
        return None
    return noise_mod.sample_path(problem.noise, seed, m, domain=domain, level=level)


def mc_estimate(problem, solver, n_samples, seed, threads=1,
                domain=streams.SAMPLE, level=0, sample_indices=None):
    """Plain Monte-Carlo mean of trajectory finals in the fine representation."""
    if n_samples < 1:
        raise ValueError(f"sample count must be >= 1, got {n_samples}")
    indices = list(sample_indices) if sample_indices is not None else list(range(n_samples))
    if len(indices) != n_samples:
        raise ValueError("sample_indices length must match the sample count")
    mass = _fine_mass_matrix(solver)

    def one(m):
        return solver.run(_path_for(problem, seed, m, domain, level)).final_state.values

    mean, ref, sum_sq, elapsed = _reduce_samples(one, indices, mass, threads)
    stat = _statistical_error(mean, ref, sum_sq, len(indices), mass)
    return EstimatorReport(
        FieldVector(FINE_INTERIOR, mean), stat, [len(indices)], [elapsed],
        level_means=[mean], level_stat_errors=[stat],
    )


def _fine_mass_matrix(solver):
    space = getattr(solver, "space", None)
    if space is not None:
        return space.fine_mass.matrix
    return solver.mass.matrix


def mlmc_estimate(problem, level_solvers, allocation, seed, threads=1):
    """Telescoped estimator; per sample the level pair shares one noise path."""
    if len(level_solvers) != len(allocation.levels):
        raise ValueError("one solver per allocation level is required")
    fine0 = level_solvers[0].space.pair.fine
    for solver in level_solvers:
        sp = solver.space
        if sp.pair.fine is not fine0 and sp.pair.fine.level_exponent != fine0.level_exponent:
            raise ValueError("all levels must share one fine mesh")
        if getattr(sp, "coefficient_hash", "") != getattr(level_solvers[0].space, "coefficient_hash", ""):
            raise ValueError("all levels must share one coefficient field")
    mass = _fine_mass_matrix(level_solvers[0])

    level_means, level_stats, counts, seconds = [], [], [], []
    for j, (_, _, m_j) in enumerate(allocation.levels):
        def correction(m, _j=j):
            path = _path_for(problem, seed, m, streams.SAMPLE, _j)
            x = level_solvers[_j].run(path).final_state.values
            if _j == 0:
                return x
            return x - level_solvers[_j - 1].run(path).final_state.values

        mean, ref, sum_sq, elapsed = _reduce_samples(correction, list(range(m_j)), mass, threads)
        level_means.append(mean)
        level_stats.append(_statistical_error(mean, ref, sum_sq, m_j, mass))
        counts.append(m_j)
        seconds.append(elapsed)

    estimate = level_means[0].copy()
    for mean in level_means[1:]:
        estimate = estimate + mean
    stat = math.sqrt(sum(s * s for s in level_stats))
    return EstimatorReport(
        FieldVector(FINE_INTERIOR, estimate), stat, counts, seconds,
        level_means=level_means, level_stat_errors=level_stats,
    )


# ---------------------------------------------------------------------------
# studies

@dataclass
class StrongRow:
    H: float
    ell: int
    M: int
    lod_error: float
    lod_stderr: float
    fem_error: float


def strong_error_study(ctx):
    """Sample-coupled strong error of the multiscale and plain coarse solvers.

    For each sample the same noise path drives the fine reference, every
    multiscale level, and every plain coarse level; errors are fine-mass L2
    distances at the final time.
    """
    cfg = ctx.config
    problem = ctx.strong_problem()
    fine_solver = ctx.fine_solver(problem)
    exponents = list(cfg.coarse_exponents)
    lod_solvers = {e: ctx.lod_solver(e, problem) for e in exponents}
    fem_solvers = {e: ctx.fem_solver(e, problem) for e in exponents}
    mass = ctx.fine_mass().matrix
    m_samples = cfg.samples_strong

    def one(m):
        path = _path_for(problem, cfg.master_seed, m, streams.STRONG, 0)
        ref = fine_solver.run(path).final_state.values
        out = []
        for e in exponents:
            d_lod = ref - lod_solvers[e].run(path).final_state.values
            d_fem = ref - fem_solvers[e].run(path).final_state.values
            out.append((
                math.sqrt(max(float(d_lod @ (mass @ d_lod)), 0.0)),
                math.sqrt(max(float(d_fem @ (mass @ d_fem)), 0.0)),
            ))
        return out

    per_sample = parallel_map(one, list(range(m_samples)), ctx.threads)
    rows = []
    for idx, e in enumerate(exponents):
        lod_errs = np.array([per_sample[m][idx][0] for m in range(m_samples)])
        fem_errs = np.array([per_sample[m][idx][1] for m in range(m_samples)])
        stderr = float(lod_errs.std(ddof=1) / math.sqrt(m_samples)) if m_samples > 1 else 0.0
        rows.append(StrongRow(
            2.0 ** -e, cfg.ell_for(e), m_samples,
            float(lod_errs.mean()), stderr, float(fem_errs.mean()),
        ))
    return rows


@dataclass
class WeakRow:
    method: str
    H_J: float
    total_samples: int
    weak_error: float
    statistical_error: float = 0.0


def weak_error_study(ctx, delta=None):
    """Weak error of LOD-MC / LOD-MLMC / coarse FEM-MC against the mean equation.

    `delta` overrides the MLMC variance-budget exponent for this study only
    (it trades statistical constant against per-level work; the MC columns
    depend on gamma alone).
    """
    cfg = ctx.config
    delta = cfg.delta if delta is None else float(delta)
    problem = ctx.weak_problem()
    reference = ctx.fine_solver(problem).run(path=None).final_state.values
    mass = ctx.fine_mass().matrix

    def weak_norm(estimate):
        d = reference - estimate
        return math.sqrt(max(float(d @ (mass @ d)), 0.0))

    rows = []
    for exponent in range(1, cfg.weak_mc_max_exponent + 1):
        level = exponent - 1
        m_j = mc_sample_count(cfg.gamma, exponent)
        lod = mc_estimate(problem, ctx.lod_solver(exponent, problem), m_j,
                          streams.derive_seed(cfg.master_seed, streams.STUDY_WEAK_MC, level),
                          threads=ctx.threads)
        rows.append(WeakRow("LOD-MC", 2.0 ** -exponent, m_j,
                            weak_norm(lod.estimate.values), lod.statistical_error))
        fem = mc_estimate(problem, ctx.fem_solver(exponent, problem), m_j,
                          streams.derive_seed(cfg.master_seed, streams.STUDY_WEAK_FEM, level),
                          threads=ctx.threads)
        rows.append(WeakRow("FEM-MC", 2.0 ** -exponent, m_j,
                            weak_norm(fem.estimate.values), fem.statistical_error))
    for exponent in range(1, cfg.weak_mlmc_max_exponent + 1):
        finest_level = exponent - 1
        allocation = SampleAllocation.plan(cfg.gamma, delta, finest_level)
        solvers = [ctx.lod_solver(e, problem) for _, e, _ in allocation.levels]
        rep = mlmc_estimate(problem, solvers, allocation,
                            streams.derive_seed(cfg.master_seed, streams.STUDY_WEAK_MLMC, finest_level),
                            threads=ctx.threads)
        rows.append(WeakRow("LOD-MLMC", 2.0 ** -exponent, allocation.total_samples,
                            weak_norm(rep.estimate.values), rep.statistical_error))
    return rows


@dataclass
class MlmcRow:
    level: int
    H_j: float
    samples: int
    correction_l2: float
    stat_error: float


def mlmc_level_report(ctx, delta=None):
    """Per-level corrections of the MLMC estimator at the finest weak level."""
    cfg = ctx.config
    delta = cfg.delta if delta is None else float(delta)
    problem = ctx.weak_problem()
    finest_level = cfg.weak_mlmc_max_exponent - 1
    allocation = SampleAllocation.plan(cfg.gamma, delta, finest_level)
    solvers = [ctx.lod_solver(e, problem) for _, e, _ in allocation.levels]
    rep = mlmc_estimate(problem, solvers, allocation,
                        streams.derive_seed(cfg.master_seed, streams.STUDY_MLMC_REPORT, finest_level),
                        threads=ctx.threads)
    mass = ctx.fine_mass().matrix
    rows = []
    for (j, exponent, count), mean, stat in zip(
        allocation.levels, rep.level_means, rep.level_stat_errors
    ):
        norm = math.sqrt(max(float(mean @ (mass @ mean)), 0.0))
        rows.append(MlmcRow(j, 2.0 ** -(j + 1), count, norm, stat))
    return rows


@dataclass
class TimingRow:
    method: str
    H_J: float
    offline_seconds: float
    projected_seconds: float
    per_sample_seconds: float
    total_samples: int


def _pilot_per_sample(problem, solver, pilot, seed):
    times = []
    for m in range(pilot):
        t0 = time.perf_counter()
        path = _path_for(problem, seed, m, streams.PILOT, 0)
        solver.run(path)
        times.append(time.perf_counter() - t0)
    return float(np.mean(times))


def timing_study(ctx):
    """Projected totals: mean pilot per-sample time times the allocation counts.

    Corrector construction is reported separately (offline column): it is paid
    once and amortized over every step and sample.
    """
    cfg = ctx.config
    if cfg.pilot_samples < 1:
        raise ValueError("pilot_samples must be >= 1")
    problem = ctx.weak_problem()
    fine_solver = ctx.fine_solver(problem)
    seed = cfg.master_seed
    tau_fine = _pilot_per_sample(problem, fine_solver, cfg.pilot_samples, seed)

    rows = []
    max_exp = cfg.weak_mlmc_max_exponent
    tau_lod = {}
    for exponent in range(1, max_exp + 1):
        tau_lod[exponent] = _pilot_per_sample(
            problem, ctx.lod_solver(exponent, problem), cfg.pilot_samples, seed
        )
    for exponent in range(1, max_exp + 1):
        h_j = 2.0 ** -exponent
        m_j = mc_sample_count(cfg.gamma, exponent)
        rows.append(TimingRow("FEM-MC(h)", h_j, 0.0, m_j * tau_fine, tau_fine, m_j))
        offline_j = ctx.lod_space(exponent).build_seconds
        rows.append(TimingRow("LOD-MC", h_j, offline_j, m_j * tau_lod[exponent],
                              tau_lod[exponent], m_j))
        allocation = SampleAllocation.plan(cfg.gamma, cfg.delta, exponent - 1)
        offline = sum(ctx.lod_space(e).build_seconds for _, e, _ in allocation.levels)
        projected = 0.0
        for j, lvl_exp, count in allocation.levels:
            next_count = allocation.count(j + 1) if j + 1 < len(allocation.levels) else 0
            projected += (count + next_count) * tau_lod[lvl_exp]
        rows.append(TimingRow("LOD-MLMC", h_j, offline, projected,
                              projected / max(allocation.total_samples, 1),
                              allocation.total_samples))
    return rows

"""Backward-Euler evolution in the fine space and in projected subspaces.

One implicit factorization per (space, timestep) is built at setup and reused
across all steps and samples; per-step noise loads come from precomputed
mode-load tables, so the online cost of a subspace trajectory is a small
dense matvec plus one coarse solve. Every linear solve carries a relative
residual check.
"""

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import noise as noise_mod
from .errors import SolverError
from .fem import (
    FINE_INTERIOR,
    MS,
    FieldVector,
    interior_load,
    l2_project_onto_fine,
)
from .lod import ms_l2_project

STEP_RTOL = 1e-10


def default_initial(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def default_source(x, y, t):
    return np.full_like(np.asarray(x, dtype=float), 5.0)


@dataclass
class EvolutionProblem:
    """Final time, step size, data functions, and the driving noise model."""

    final_time: float = 0.5
    timestep: float = 0.01
    initial: callable = default_initial
    source: callable = default_source           # f(x, y, t); None disables it
    source_time_dependent: bool = False
    noise: noise_mod.NoiseModel = None
    coefficient: object = None

    def __post_init__(self):
        if self.final_time <= 0.0 or self.timestep <= 0.0:
            raise ValueError("final_time and timestep must be positive")
        n = round(self.final_time / self.timestep)
        if n < 1 or abs(n * self.timestep - self.final_time) > 1e-9 * self.final_time:
            raise ValueError(
                f"timestep {self.timestep} does not divide final time {self.final_time}"
            )
        self.steps = int(n)
        self.timestep = self.final_time / self.steps

    def times(self):
        return self.timestep * np.arange(1, self.steps + 1)


@dataclass
class TrajectoryResult:
    final_state: FieldVector           # fine-interior representation
    coefficients: FieldVector = None   # subspace coefficients when applicable
    snapshots: list = None
    setup_seconds: float = 0.0
    step_seconds: float = 0.0


def _check_residual(lhs, x, rhs):
    scale = np.linalg.norm(rhs)
    if scale > 0.0:
        res = np.linalg.norm(lhs @ x - rhs) / scale
        if res > STEP_RTOL:
            raise SolverError(f"time step residual {res:.3e} exceeds {STEP_RTOL:.1e}")


class FineSolver:
    """Prepared backward-Euler stepper on the fine interior space."""

    def __init__(self, problem, mesh, stiffness, mass, pairing="nodal"):
        t0 = time.perf_counter()
        self.problem = problem
        self.mesh = mesh
        self.stiffness = stiffness
        self.mass = mass
        k = problem.timestep
        self.lhs = (mass.matrix + k * stiffness.matrix).tocsr()
        try:
            self.lu = spla.splu(self.lhs.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"time-step factorization failed: {exc}") from exc
        self.x0 = l2_project_onto_fine(mesh, mass, problem.initial).values
        self._source_loads(mesh)
        self.mode_loads = None
        if problem.noise is not None:
            if pairing == "nodal":
                table = noise_mod.mode_matrix(mesh, problem.noise.truncation)
                self.mode_loads = mass.matrix @ table
            else:
                self.mode_loads = np.asarray(
                    noise_mod.exact_mode_loads(mesh, problem.noise.truncation)
                )
        self.setup_seconds = time.perf_counter() - t0

    def _source_loads(self, mesh):
        p = self.problem
        if p.source is None:
            self.source_load = None
        elif p.source_time_dependent:
            self.source_load = [interior_load(mesh, p.source, t) for t in p.times()]
        else:
            self.source_load = interior_load(mesh, p.source, p.timestep)

    def _source_at(self, step):
        if self.source_load is None:
            return None
        if isinstance(self.source_load, list):
            return self.source_load[step - 1]
        return self.source_load

    def run(self, path=None, record=False):
        """Evolve to the final time; `path` holds the noise increments."""
        p = self.problem
        k = p.timestep
        x = self.x0.copy()
        snaps = [] if record else None
        t0 = time.perf_counter()
        for j in range(1, p.steps + 1):
            rhs = self.mass.matrix @ x
            b = self._source_at(j)
            if b is not None:
                rhs = rhs + k * b
            if path is not None and self.mode_loads is not None:
                rhs = rhs + self.mode_loads @ noise_mod.mode_coefficients(p.noise, path, j)
            x = self.lu.solve(rhs)
            _check_residual(self.lhs, x, rhs)
            if record:
                snaps.append(x.copy())
        return TrajectoryResult(
            FieldVector(FINE_INTERIOR, x),
            snapshots=snaps,
            setup_seconds=self.setup_seconds,
            step_seconds=time.perf_counter() - t0,
        )


class SubspaceSolver:
    """Prepared backward-Euler stepper on a projected (LOD or coarse) space."""

    def __init__(self, problem, space, pairing="nodal"):
        t0 = time.perf_counter()
        self.problem = problem
        self.space = space
        k = problem.timestep
        self.lhs = (space.mass + k * space.stiffness).tocsr()
        try:
            self.lu = spla.splu(self.lhs.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"time-step factorization failed: {exc}") from exc
        fine = space.pair.fine
        x0_fine = l2_project_onto_fine(fine, space.fine_mass, problem.initial)
        self.c0 = ms_l2_project(space, x0_fine).values
        if problem.source is None:
            self.source_load = None
        elif problem.source_time_dependent:
            self.source_load = [
                space.project_load(interior_load(fine, problem.source, t))
                for t in problem.times()
            ]
        else:
            self.source_load = space.project_load(
                interior_load(fine, problem.source, problem.timestep)
            )
        self.mode_loads = None
        if problem.noise is not None:
            if pairing == "nodal":
                self.mode_loads = np.asarray(space.mode_loads(problem.noise.truncation))
            else:
                table = noise_mod.exact_mode_loads(fine, problem.noise.truncation)
                self.mode_loads = space.basis.T @ table
        self.setup_seconds = time.perf_counter() - t0

    def _source_at(self, step):
        if self.source_load is None:
            return None
        if isinstance(self.source_load, list):
            return self.source_load[step - 1]
        return self.source_load

    def run(self, path=None, record=False):
        p = self.problem
        k = p.timestep
        c = self.c0.copy()
        snaps = [] if record else None
        t0 = time.perf_counter()
        for j in range(1, p.steps + 1):
            rhs = self.space.mass @ c
            b = self._source_at(j)
            if b is not None:
                rhs = rhs + k * b
            if path is not None and self.mode_loads is not None:
                rhs = rhs + self.mode_loads @ noise_mod.mode_coefficients(p.noise, path, j)
            c = self.lu.solve(rhs)
            _check_residual(self.lhs, c, rhs)
            if record:
                snaps.append(c.copy())
        coeffs = FieldVector(MS, c)
        return TrajectoryResult(
            self.space.to_fine(coeffs),
            coefficients=coeffs,
            snapshots=snaps,
            setup_seconds=self.setup_seconds,
            step_seconds=time.perf_counter() - t0,
        )


def run_fem_trajectory(problem, mesh, stiffness, mass, path, pairing="nodal", record=False):
    """Fine-space reference trajectory driven by one noise path."""
    return FineSolver(problem, mesh, stiffness, mass, pairing).run(path, record=record)


def run_lod_trajectory(problem, space, path, pairing="nodal", record=False):
    """Multiscale trajectory; final state in both coefficient and fine form."""
    return SubspaceSolver(problem, space, pairing).run(path, record=record)


def run_expectation_reference(problem, mesh, stiffness, mass, record=False):
    """Deterministic evolution of the mean (noise load set to zero)."""
    return FineSolver(problem, mesh, stiffness, mass).run(path=None, record=record)

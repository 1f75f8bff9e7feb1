"""Shared lazy construction of meshes, operators, spaces, and solvers.

One context per (config, coefficient); studies and the CLI pull prepared
objects from here so factorizations, corrector bases, and mode-load tables
are built once and reused across samples, levels, and studies. When a cache
directory is set, corrector bases are loaded from / saved to disk keyed by
(coarse exponent, fine exponent, ell, coefficient hash).
"""

import os

from . import noise as noise_mod
from .config import generate_coefficient
from .fem import assemble_mass, assemble_stiffness
from .lod import build_multiscale_space, coarse_fem_space, load_basis_cache, save_basis_cache
from .mesh import build_uniform_mesh, refine
from .timestepper import EvolutionProblem, FineSolver, SubspaceSolver


class ExperimentContext:
    def __init__(self, config, threads=1, cache_dir=None, coefficient=None):
        self.config = config
        self.threads = max(1, int(threads))
        self.cache_dir = cache_dir
        self.coefficient = coefficient if coefficient is not None else generate_coefficient(config)
        self.coefficient_hash = self.coefficient.content_hash()
        self.fine_mesh = build_uniform_mesh(config.fine_exponent)
        self._memo = {}

    def fine_stiffness(self):
        if "S" not in self._memo:
            self._memo["S"] = assemble_stiffness(self.fine_mesh, self.coefficient)
        return self._memo["S"]

    def fine_mass(self):
        if "M" not in self._memo:
            self._memo["M"] = assemble_mass(self.fine_mesh)
        return self._memo["M"]

    def pair(self, coarse_exponent):
        key = ("pair", coarse_exponent)
        if key not in self._memo:
            coarse = build_uniform_mesh(coarse_exponent)
            lp = refine(coarse, self.config.fine_exponent - coarse_exponent)
            # share the already-built fine mesh caches across pairs
            lp.fine = self.fine_mesh
            self._memo[key] = lp
        return self._memo[key]

    def _cache_path(self, coarse_exponent, ell):
        if self.cache_dir is None:
            return None
        os.makedirs(self.cache_dir, exist_ok=True)
        name = f"basis_H{coarse_exponent}_h{self.config.fine_exponent}_ell{ell}.npz"
        return os.path.join(self.cache_dir, name)

    def lod_space(self, coarse_exponent):
        key = ("lod", coarse_exponent)
        if key not in self._memo:
            ell = self.config.ell_for(coarse_exponent)
            pair = self.pair(coarse_exponent)
            path = self._cache_path(coarse_exponent, ell)
            space = None
            if path is not None and os.path.exists(path):
                # an existing-but-incompatible cache is an error, not a rebuild
                space = load_basis_cache(
                    path, pair, ell, self.coefficient_hash,
                    self.fine_stiffness(), self.fine_mass(),
                )
            if space is None:
                space = build_multiscale_space(
                    pair, self.fine_stiffness(), self.fine_mass(), ell,
                    coefficient_hash=self.coefficient_hash, threads=self.threads,
                )
                if path is not None:
                    save_basis_cache(path, space)
            self._memo[key] = space
        return self._memo[key]

    def coarse_space(self, coarse_exponent):
        key = ("fem", coarse_exponent)
        if key not in self._memo:
            self._memo[key] = coarse_fem_space(
                self.pair(coarse_exponent), self.fine_stiffness(), self.fine_mass()
            )
        return self._memo[key]

    def noise_model(self, amplitude):
        c = self.config
        return noise_mod.NoiseModel(amplitude, c.noise_decay, c.kappa(), c.timestep, c.steps)

    def problem(self, amplitude=None):
        c = self.config
        amp = c.noise_amplitude if amplitude is None else amplitude
        return EvolutionProblem(
            final_time=c.final_time,
            timestep=c.timestep,
            noise=self.noise_model(amp),
            coefficient=self.coefficient,
        )

    def strong_problem(self):
        if "strong_problem" not in self._memo:
            self._memo["strong_problem"] = self.problem(self.config.noise_amplitude)
        return self._memo["strong_problem"]

    def weak_problem(self):
        if "weak_problem" not in self._memo:
            self._memo["weak_problem"] = self.problem(self.config.weak_noise_amplitude)
        return self._memo["weak_problem"]

    def fine_solver(self, problem):
        key = ("fine_solver", id(problem))
        if key not in self._memo:
            self._memo[key] = FineSolver(
                problem, self.fine_mesh, self.fine_stiffness(), self.fine_mass(),
                pairing=self.config.noise_pairing,
            )
        return self._memo[key]

    def lod_solver(self, coarse_exponent, problem):
        key = ("lod_solver", coarse_exponent, id(problem))
        if key not in self._memo:
            self._memo[key] = SubspaceSolver(
                problem, self.lod_space(coarse_exponent), pairing=self.config.noise_pairing
            )
        return self._memo[key]

    def fem_solver(self, coarse_exponent, problem):
        key = ("fem_solver", coarse_exponent, id(problem))
        if key not in self._memo:
            self._memo[key] = SubspaceSolver(
                problem, self.coarse_space(coarse_exponent), pairing=self.config.noise_pairing
            )
        return self._memo[key]

"""Multiscale (LOD) solver and Monte-Carlo experiment harness.

Subpackages cover nested structured meshes, P1 finite-element assembly with a
rough piecewise-constant diffusion, localized corrector construction, spectral
Q-Wiener noise sampling, backward-Euler evolution, and MC/MLMC estimation with
a reproducible experiment CLI.
"""

__version__ = "0.1.0"

from .errors import (
    CacheError,
    ConfigError,
    CorrectorSolveError,
    EllipticityError,
    MslodError,
    SolverError,
    TagError,
)

__all__ = [
    "CacheError",
    "ConfigError",
    "CorrectorSolveError",
    "EllipticityError",
    "MslodError",
    "SolverError",
    "TagError",
]

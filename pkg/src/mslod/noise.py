"""Spectral Q-Wiener noise on the unit square.

The covariance eigenbasis is sin(m pi x) sin(n pi y) with power-law
eigenvalues amplitude * (m^(2+decay) + n^(2+decay))^-1. Increments of the
truncated Karhunen-Loeve expansion are sampled per mode from independent
counter-based streams keyed by (seed, domain, level, sample, m, n), so
enlarging the truncation preserves already-sampled modes and distinct
samples/levels never share a stream.
"""

from dataclasses import dataclass

import numpy as np

from . import streams
from .fem import FINE_INTERIOR, FieldVector


@dataclass(frozen=True)
class NoiseModel:
    amplitude: float     # overall eigenvalue scale
    decay: float         # eigenvalue decay exponent offset (>= 0)
    truncation: int      # modes per direction
    timestep: float
    steps: int

    def __post_init__(self):
        if self.amplitude <= 0.0:
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")
        if self.decay < 0.0:
            raise ValueError(f"decay must be nonnegative, got {self.decay}")
        if self.truncation < 1:
            raise ValueError(f"truncation must be >= 1, got {self.truncation}")
        if self.timestep <= 0.0 or self.steps < 1:
            raise ValueError("timestep must be positive and steps >= 1")


def eigenvalue(model, m, n):
    """Covariance eigenvalue of mode (m, n), m, n >= 1."""
    if np.any(np.asarray(m) < 1) or np.any(np.asarray(n) < 1):
        raise ValueError("mode indices start at 1")
    p = 2.0 + model.decay
    return model.amplitude / (np.asarray(m, dtype=float) ** p + np.asarray(n, dtype=float) ** p)


def eigenvalue_grid(model):
    """(truncation x truncation) eigenvalue table, [m-1, n-1] indexing."""
    k = np.arange(1, model.truncation + 1, dtype=float)
    return eigenvalue(model, k[:, None], k[None, :])


def partial_trace(model, kappa):
    """Sum of eigenvalues over modes m, n <= kappa."""
    k = np.arange(1, kappa + 1, dtype=float)
    return float(eigenvalue(model, k[:, None], k[None, :]).sum())


@dataclass(frozen=True)
class NoisePath:
    """One sampled sequence of KL increments, Normal(0, timestep) per mode."""

    increments: np.ndarray   # (steps, truncation, truncation), [j, m-1, n-1]
    seed_record: tuple       # (seed, sample_index) plus the stream tags used

    @property
    def steps(self):
        return self.increments.shape[0]

    @property
    def truncation(self):
        return self.increments.shape[1]


def sample_path(model, seed, sample_index, domain=streams.SAMPLE, level=0):
    """Draw all mode increments for one sample, one stream per mode."""
    kappa, n = model.truncation, model.steps
    std = np.sqrt(model.timestep)
    inc = np.empty((n, kappa, kappa))
    for m in range(1, kappa + 1):
        for q in range(1, kappa + 1):
            gen = streams.generator(seed, domain, level, sample_index, m, q)
            inc[:, m - 1, q - 1] = gen.normal(0.0, std, size=n)
    inc.setflags(write=False)
    return NoisePath(inc, (int(seed), int(sample_index), int(domain), int(level)))


def zero_path(model):
    """All-zero increments (deterministic runs)."""
    inc = np.zeros((model.steps, model.truncation, model.truncation))
    inc.setflags(write=False)
    return NoisePath(inc, (0, -1, 0, 0))


def mode_matrix(mesh, kappa):
    """Nodal sine-mode table: column (m-1)*kappa + (n-1) holds
    sin(m pi x) sin(n pi y) at interior vertices (y-major vertex order)."""
    cached = mesh._caches.get(("modes", kappa))
    if cached is not None:
        return cached
    side = 2 ** mesh.level_exponent
    t = np.arange(1, side) / side
    modes = np.arange(1, kappa + 1)
    sx = np.sin(np.pi * t[:, None] * modes[None, :])   # (side-1, kappa)
    # interior vertex (ix, jy) flattens to jy*(side-1)+ix
    table = np.einsum("jn,im->jimn", sx, sx).reshape((side - 1) ** 2, kappa * kappa)
    table.setflags(write=False)
    mesh._caches[("modes", kappa)] = table
    return table


def exact_mode_loads(mesh, kappa, points_per_axis=16):
    """Quadrature-exact pairings (sine mode, interior hat) per mode column.

    Validation alternative to the nodal-interpolation route: integrates each
    mode against every P1 hat with a collapsed Gauss rule per triangle, which
    is exact to machine precision for the resolved mode range. Intended for
    small meshes; the nodal route is the production default.
    """
    cached = mesh._caches.get(("exact_modes", kappa, points_per_axis))
    if cached is not None:
        return cached
    gs, gw = np.polynomial.legendre.leggauss(points_per_axis)
    gs, gw = 0.5 * (gs + 1.0), 0.5 * gw
    s = gs[:, None]
    t = gs[None, :]
    # Duffy map onto the unit simplex: xi = s(1-t), eta = s t, jacobian s
    xi = (s * (1.0 - t)).ravel()
    eta = (s * t).ravel()
    lam_flat = np.stack([1.0 - xi - eta, xi, eta])     # (3, npts) barycentric
    wts_flat = ((gw[:, None] * gw[None, :]) * s).ravel()

    coords = mesh.element_coordinates()
    # x(s,t) = v0 + s (v1 - v0) + s t (v2 - v0); jacobian 2*area*s
    d1 = coords[:, 1] - coords[:, 0]
    d2 = coords[:, 2] - coords[:, 0]
    two_area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    modes = np.arange(1, kappa + 1)
    out = np.zeros((mesh.n_vertices, kappa * kappa))
    chunk = max(1, 4_000_000 // (len(wts_flat) * kappa))
    for start in range(0, mesh.n_elements, chunk):
        sl = slice(start, min(start + chunk, mesh.n_elements))
        x = coords[sl, 0, 0][:, None] + np.outer(d1[sl, 0], xi) + np.outer(d2[sl, 0], eta)
        y = coords[sl, 0, 1][:, None] + np.outer(d1[sl, 1], xi) + np.outer(d2[sl, 1], eta)
        sinx = np.sin(np.pi * x[:, :, None] * modes[None, None, :])   # (ne, np, kappa)
        siny = np.sin(np.pi * y[:, :, None] * modes[None, None, :])
        w_elem = wts_flat[None, :] * two_area[sl][:, None]            # (ne, np)
        for a in range(3):
            wa = w_elem * lam_flat[a][None, :]
            pairing = np.einsum("ep,epm,epn->emn", wa, sinx, siny).reshape(x.shape[0], -1)
            np.add.at(out, mesh.elements[sl, a], pairing)
    result = out[mesh.interior_vertices]
    result.setflags(write=False)
    mesh._caches[("exact_modes", kappa, points_per_axis)] = result
    return result


def mode_coefficients(model, path, step):
    """sqrt(eigenvalue) * increment for every mode at the given step (1-based)."""
    if not 1 <= step <= path.steps:
        raise ValueError(f"step {step} outside 1..{path.steps}")
    lam = eigenvalue_grid(model)
    return (np.sqrt(lam) * path.increments[step - 1]).ravel()


def increment_field(model, path, step, mesh):
    """Nodal values of the truncated noise increment at fine interior vertices."""
    table = mode_matrix(mesh, model.truncation)
    return FieldVector(FINE_INTERIOR, table @ mode_coefficients(model, path, step))

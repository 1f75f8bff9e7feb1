"""P1 finite elements on the nested unit-square meshes.

Covers stiffness/mass assembly with a piecewise-constant diffusion field,
load quadrature, the fine L2 projection, the coarse quasi-interpolation
(elementwise L2 projection followed by vertex averaging), prolongation
between nested levels, and energy norms. Homogeneous Dirichlet conditions
are applied by assembling over all vertices and restricting to interior
rows/columns.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EllipticityError, SolverError, TagError

# space tags for coefficient vectors
FINE_INTERIOR = "fine-interior"
FINE_ALL = "fine-all"
COARSE_INTERIOR = "coarse-interior"
COARSE_ALL = "coarse-all"
MS = "ms"  # coefficients in a projected (multiscale or plain coarse) basis

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_LOCAL_MASS_INV = np.array([[3.0, -1.0, -1.0], [-1.0, 3.0, -1.0], [-1.0, -1.0, 3.0]]) / 4.0 * 12.0


@dataclass
class FieldVector:
    """A coefficient vector tagged with the space it lives in."""

    tag: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def _check(self, other):
        if not isinstance(other, FieldVector):
            raise TagError(f"expected FieldVector, got {type(other).__name__}")
        if other.tag != self.tag:
            raise TagError(f"tag mismatch: {self.tag!r} vs {other.tag!r}")
        if other.values.shape != self.values.shape:
            raise TagError(f"length mismatch: {self.values.shape} vs {other.values.shape}")

    def __add__(self, other):
        self._check(other)
        return FieldVector(self.tag, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return FieldVector(self.tag, self.values - other.values)

    def __mul__(self, scalar):
        return FieldVector(self.tag, self.values * float(scalar))

    __rmul__ = __mul__

    def copy(self):
        return FieldVector(self.tag, self.values.copy())

    @property
    def size(self):
        return self.values.size


def require_tag(v, tag, size=None):
    if v.tag != tag:
        raise TagError(f"expected tag {tag!r}, got {v.tag!r}")
    if size is not None and v.size != size:
        raise TagError(f"expected length {size}, got {v.size}")
    return v.values


@dataclass
class CoefficientField:
    """Piecewise-constant scalar diffusion on a 2^e x 2^e grid.

    values[j, i] is the coefficient on the cell [i, i+1] x [j, j+1] scaled by
    2^-e. alpha_minus/alpha_plus are the declared ellipticity bounds.
    """

    epsilon_exponent: int
    values: np.ndarray
    alpha_minus: float
    alpha_plus: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = 2 ** self.epsilon_exponent
        if self.values.shape != (n, n):
            raise ValueError(f"expected a {n}x{n} value grid, got {self.values.shape}")
        if not (0.0 < self.alpha_minus <= self.alpha_plus):
            raise EllipticityError(
                f"bounds must satisfy 0 < alpha_minus <= alpha_plus, "
                f"got [{self.alpha_minus}, {self.alpha_plus}]"
            )
        vmin, vmax = self.values.min(), self.values.max()
        if vmin <= 0.0:
            raise EllipticityError(f"nonpositive coefficient value {vmin}")
        if vmin < self.alpha_minus or vmax > self.alpha_plus:
            raise EllipticityError(
                f"values [{vmin}, {vmax}] escape the declared bounds "
                f"[{self.alpha_minus}, {self.alpha_plus}]"
            )

    @classmethod
    def constant(cls, value, epsilon_exponent=0):
        n = 2 ** epsilon_exponent
        return cls(epsilon_exponent, np.full((n, n), float(value)), value, value)

    def value_at(self, x, y):
        """Cell value at point(s); constant on each epsilon-cell."""
        n = 2 ** self.epsilon_exponent
        i = np.clip((np.asarray(x) * n).astype(np.int64), 0, n - 1)
        j = np.clip((np.asarray(y) * n).astype(np.int64), 0, n - 1)
        return self.values[j, i]

    def to_text(self):
        header = f"mslod-coefficient v1\n{self.epsilon_exponent} {self.alpha_minus:.17g} {self.alpha_plus:.17g}\n"
        body = "\n".join(f"{v:.17g}" for v in self.values.ravel())
        return header + body + "\n"

    @classmethod
    def from_text(cls, text):
        lines = text.strip().split("\n")
        if not lines or lines[0].strip() != "mslod-coefficient v1":
            raise ValueError("not a coefficient-grid file (bad magic line)")
        e_str, amin, amax = lines[1].split()
        e = int(e_str)
        n = 2 ** e
        flat = np.array([float(s) for s in lines[2 : 2 + n * n]])
        if flat.size != n * n:
            raise ValueError(f"expected {n * n} values, found {flat.size}")
        return cls(e, flat.reshape(n, n), float(amin), float(amax))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())

    def content_hash(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()


@dataclass
class SparseOperator:
    """Symmetric sparse bilinear-form matrix with its Dirichlet restriction."""

    kind: str                 # "stiffness" or "mass"
    level_exponent: int
    matrix: sp.csr_matrix     # interior x interior
    full: sp.csr_matrix       # all vertices x all vertices
    local_blocks: np.ndarray = None   # (n_elements, 3, 3) element contributions
    _caches: dict = field(default_factory=dict, repr=False)

    @property
    def dimension(self):
        return self.matrix.shape[0]

    def factor(self):
        lu = self._caches.get("lu")
        if lu is None:
            lu = spla.splu(self.matrix.tocsc())
            self._caches["lu"] = lu
        return lu

    def solve(self, b, rtol=1e-10):
        """Direct solve with a relative-residual check."""
        x = self.factor().solve(b)
        bnorm = np.linalg.norm(b)
        if bnorm > 0.0:
            res = np.linalg.norm(self.matrix @ x - b) / bnorm
            if res > rtol:
                raise SolverError(f"{self.kind} solve residual {res:.3e} exceeds {rtol:.1e}")
        return x

    def norm_of(self, values):
        q = float(values @ (self.matrix @ values))
        return np.sqrt(max(q, 0.0))


def _element_geometry(mesh):
    """Areas and P1 basis gradients for every element (vectorized)."""
    coords = mesh.element_coordinates()
    d1 = coords[:, 1] - coords[:, 0]
    d2 = coords[:, 2] - coords[:, 0]
    two_area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    areas = 0.5 * two_area
    # grad lambda_i = (y_{i+1} - y_{i+2}, x_{i+2} - x_{i+1}) / (2 area)
    grads = np.empty((mesh.n_elements, 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = coords[:, j, 1] - coords[:, k, 1]
        grads[:, i, 1] = coords[:, k, 0] - coords[:, j, 0]
    grads /= two_area[:, None, None]
    return areas, grads


def _scatter(mesh, local):
    """Assemble per-element 3x3 blocks into a full symmetric CSR matrix."""
    nv = mesh.n_vertices
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    full = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    full.sum_duplicates()
    return full


def _restrict(mesh, full):
    idx = mesh.interior_vertices
    return full[idx][:, idx].tocsr()


def element_coefficient_values(mesh, coefficient):
    """Diffusion value per element (epsilon-cell containing the centroid)."""
    centroids = mesh.element_coordinates().mean(axis=1)
    return np.asarray(coefficient.value_at(centroids[:, 0], centroids[:, 1]), dtype=float)


def assemble_stiffness(mesh, coefficient):
    """Stiffness operator for the form  integral A grad(u) . grad(v)."""
    if coefficient.epsilon_exponent > mesh.level_exponent:
        raise ValueError(
            f"coefficient grid 2^{coefficient.epsilon_exponent} not aligned with "
            f"mesh 2^{mesh.level_exponent}; the mesh must resolve the coefficient"
        )
    areas, grads = _element_geometry(mesh)
    a_elem = element_coefficient_values(mesh, coefficient)
    if np.any(a_elem <= 0.0):
        raise EllipticityError("nonpositive coefficient value on an element")
    # exact integration: constant coefficient times constant gradients per element
    local = np.einsum("e,eid,ejd->eij", a_elem * areas, grads, grads)
    full = _scatter(mesh, local)
    return SparseOperator(
        "stiffness", mesh.level_exponent, _restrict(mesh, full), full, local_blocks=local
    )


def assemble_mass(mesh):
    """Exact P1 mass operator."""
    areas, _ = _element_geometry(mesh)
    local = areas[:, None, None] * _LOCAL_MASS[None, :, :]
    full = _scatter(mesh, local)
    return SparseOperator("mass", mesh.level_exponent, _restrict(mesh, full), full)


def _evaluate(f, x, y, time=None):
    vals = f(x, y) if time is None else f(x, y, time)
    return np.broadcast_to(np.asarray(vals, dtype=float), x.shape)


def load_vector(mesh, f, time=None):
    """Load integrals (f, phi_j) for all vertices, 3-point edge-midpoint rule.

    The rule is exact for quadratics, so for piecewise-linear f the loads are
    exact; for smooth f the quadrature error stays below the P1 error.
    """
    coords = mesh.element_coordinates()
    areas, _ = _element_geometry(mesh)
    mids = 0.5 * (coords + np.roll(coords, -1, axis=1))  # edges (01, 12, 20)
    fm = _evaluate(f, mids[:, :, 0], mids[:, :, 1], time)
    # phi_i at the three edge midpoints: 1/2 on the two incident edges
    local = np.empty((mesh.n_elements, 3))
    local[:, 0] = fm[:, 0] + fm[:, 2]
    local[:, 1] = fm[:, 0] + fm[:, 1]
    local[:, 2] = fm[:, 1] + fm[:, 2]
    local *= (areas / 6.0)[:, None]
    b = np.zeros(mesh.n_vertices)
    np.add.at(b, mesh.elements.ravel(), local.ravel())
    return b


def interior_load(mesh, f, time=None):
    return load_vector(mesh, f, time)[mesh.interior_vertices]


def l2_project_onto_fine(mesh, mass, f):
    """L2 projection of a pointwise function onto the interior P1 space."""
    x = mass.solve(interior_load(mesh, f))
    return FieldVector(FINE_INTERIOR, x)


def nodal_interpolant(mesh, f):
    """Vertex interpolation of f on interior nodes (test/diagnostic helper)."""
    pts = mesh.vertices[mesh.interior_vertices]
    return FieldVector(FINE_INTERIOR, np.asarray(f(pts[:, 0], pts[:, 1]), dtype=float))


def extend_by_zero(mesh, interior_values):
    out = np.zeros(mesh.n_vertices)
    out[mesh.interior_vertices] = interior_values
    return out


def prolongation_matrix(pair):
    """Nodal evaluation of coarse P1 functions at fine vertices (all x all)."""
    cached = pair._caches.get("prolongation")
    if cached is not None:
        return cached
    coarse, fine = pair.coarse, pair.fine
    nc = coarse.cells_per_side
    pts = fine.vertices
    ci = np.minimum((pts[:, 0] * nc).astype(np.int64), nc - 1)
    cj = np.minimum((pts[:, 1] * nc).astype(np.int64), nc - 1)
    u = pts[:, 0] * nc - ci
    w = pts[:, 1] * nc - cj
    ll = cj * (nc + 1) + ci
    lr, ul = ll + 1, ll + (nc + 1)
    ur = ul + 1
    lower = w <= u
    cols = np.where(lower[:, None], np.column_stack([ll, lr, ur]), np.column_stack([ll, ur, ul]))
    vals = np.where(
        lower[:, None],
        np.column_stack([1.0 - u, u - w, w]),
        np.column_stack([1.0 - w, u, w - u]),
    )
    rows = np.repeat(np.arange(fine.n_vertices), 3)
    P = sp.coo_matrix(
        (vals.ravel(), (rows, cols.ravel())), shape=(fine.n_vertices, coarse.n_vertices)
    ).tocsr()
    P.sum_duplicates()
    pair._caches["prolongation"] = P
    return P


def prolongation_interior(pair):
    cached = pair._caches.get("prolongation_int")
    if cached is None:
        P = prolongation_matrix(pair)
        cached = P[pair.fine.interior_vertices][:, pair.coarse.interior_vertices].tocsr()
        pair._caches["prolongation_int"] = cached
    return cached


def prolongate(pair, v):
    """Embed a coarse-interior function into the fine interior space."""
    vals = require_tag(v, COARSE_INTERIOR, pair.coarse.n_interior)
    return FieldVector(FINE_INTERIOR, prolongation_interior(pair) @ vals)


def _barycentric_values(tri_coords, points):
    """lambda_i of each triangle evaluated at per-triangle points.

    tri_coords: (n, 3, 2), points: (n, m, 2) -> (n, 3, m)
    """
    out = np.empty((tri_coords.shape[0], 3, points.shape[1]))
    x, y = points[:, :, 0], points[:, :, 1]
    d1 = tri_coords[:, 1] - tri_coords[:, 0]
    d2 = tri_coords[:, 2] - tri_coords[:, 0]
    det = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])[:, None]
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        xj, yj = tri_coords[:, j, 0][:, None], tri_coords[:, j, 1][:, None]
        xk, yk = tri_coords[:, k, 0][:, None], tri_coords[:, k, 1][:, None]
        out[:, i, :] = ((yj - yk) * (x - xk) + (xk - xj) * (y - yk)) / det
    return out


def interpolation_matrix(pair):
    """Quasi-interpolation fine -> coarse as a sparse matrix (all x all).

    Composition of the elementwise L2 projection onto linears per coarse
    element with uniform vertex averaging over incident elements. Restricted
    to interior rows it is the projection whose kernel is the fine-scale
    space; it fixes coarse functions exactly.
    """
    cached = pair._caches.get("interpolation")
    if cached is not None:
        return cached
    coarse, fine = pair.coarse, pair.fine
    parent = pair.element_parent()
    n_ce = coarse.n_elements

    fine_coords = fine.element_coordinates()
    areas_f, _ = _element_geometry(fine)
    parent_coords = coarse.element_coordinates()[parent]          # (nFE, 3, 2)
    lam = _barycentric_values(parent_coords, fine_coords)          # (nFE, 3, 3)

    # integrals of (coarse-local linear, fine hat) pairs on each fine element
    contrib = np.einsum("e,eib,ba->eia", areas_f, lam, _LOCAL_MASS)
    rows = (3 * parent[:, None, None] + np.arange(3)[None, :, None])
    rows = np.broadcast_to(rows, contrib.shape).ravel()
    cols = np.broadcast_to(fine.elements[:, None, :], contrib.shape).ravel()
    R = sp.coo_matrix((contrib.ravel(), (rows, cols)), shape=(3 * n_ce, fine.n_vertices)).tocsr()
    R.sum_duplicates()

    area_c = 0.5 * coarse.width ** 2
    gram_inv = sp.kron(sp.identity(n_ce, format="csr"), sp.csr_matrix(_LOCAL_MASS_INV / area_c))
    nodal = gram_inv @ R

    cards = np.asarray(coarse.vertex_to_elements().sum(axis=1)).ravel().astype(float)
    avg_rows = coarse.elements.ravel()
    avg_cols = (3 * np.arange(n_ce)[:, None] + np.arange(3)[None, :]).ravel()
    avg_vals = 1.0 / cards[avg_rows]
    avg = sp.coo_matrix(
        (avg_vals, (avg_rows, avg_cols)), shape=(coarse.n_vertices, 3 * n_ce)
    ).tocsr()

    C = (avg @ nodal).tocsr()
    pair._caches["interpolation"] = C
    return C


def interpolation_interior(pair):
    cached = pair._caches.get("interpolation_int")
    if cached is None:
        C = interpolation_matrix(pair)
        cached = C[pair.coarse.interior_vertices][:, pair.fine.interior_vertices].tocsr()
        pair._caches["interpolation_int"] = cached
    return cached


def quasi_interpolate(pair, v):
    """Project a fine-interior function to coarse-interior nodal values."""
    vals = require_tag(v, FINE_INTERIOR, pair.fine.n_interior)
    return FieldVector(COARSE_INTERIOR, interpolation_interior(pair) @ vals)


def energy_norm(stiffness, v):
    """sqrt(v' S v); zero exactly when v vanishes."""
    if stiffness.kind != "stiffness":
        raise TagError(f"expected a stiffness operator, got {stiffness.kind!r}")
    if v.size != stiffness.dimension:
        raise TagError(f"dimension mismatch: {v.size} vs {stiffness.dimension}")
    return stiffness.norm_of(v.values)

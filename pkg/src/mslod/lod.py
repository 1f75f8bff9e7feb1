"""Localized correctors and the multiscale coarse space.

Each coarse element K owns saddle-point problems on the patch N^ell(K): for
every interior coarse vertex of K, minimize the energy of a fine-scale
function (kernel of the quasi-interpolation) matching the element-restricted
stiffness action of the coarse hat. Summing the element contributions gives
the basis correctors; the corrected basis spans a coarse space whose
stiffness/mass are plain Galerkin restrictions. Corrector supports live on
the patches, so storage stays proportional to patch size, and the corrected
basis can be cached on disk and re-used across time steps and samples.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import noise
from .errors import CacheError, CorrectorSolveError, SolverError, TagError
from .fem import (
    FINE_INTERIOR,
    MS,
    FieldVector,
    _barycentric_values,
    interpolation_interior,
    interpolation_matrix,
    prolongation_interior,
    prolongation_matrix,
    require_tag,
)
from .mesh import element_patch
from .util import parallel_map

KKT_RTOL = 1e-10
KERNEL_TOL = 1e-10


def _symmetrized(a):
    a = a.tocsr()
    return ((a + a.T) * 0.5).tocsr()


@dataclass
class GalerkinSubspace:
    """A subspace of the fine interior space given by basis columns.

    Holds the restricted stiffness/mass and solver caches shared by the
    corrected (multiscale) space and the plain coarse FEM space.
    """

    pair: object
    basis: sp.csc_matrix          # fine-interior x n_basis
    stiffness: sp.csr_matrix      # basis' S basis
    mass: sp.csr_matrix           # basis' M basis
    fine_stiffness: object        # SparseOperator on the fine mesh
    fine_mass: object
    label: str = "coarse-fem"
    build_seconds: float = 0.0
    _caches: dict = field(default_factory=dict, repr=False)

    @property
    def dimension(self):
        return self.basis.shape[1]

    def mass_factor(self):
        lu = self._caches.get("mass_lu")
        if lu is None:
            lu = spla.splu(self.mass.tocsc())
            self._caches["mass_lu"] = lu
        return lu

    def to_fine(self, coefficients):
        """Fine-interior representation of subspace coefficients."""
        vals = require_tag(coefficients, MS, self.dimension)
        return FieldVector(FINE_INTERIOR, self.basis @ vals)

    def project_load(self, fine_load):
        return self.basis.T @ fine_load

    def mode_loads(self, kappa):
        """(n_basis x kappa^2) load table: basis' M applied to each sine mode."""
        cached = self._caches.get(("mode_loads", kappa))
        if cached is None:
            table = noise.mode_matrix(self.pair.fine, kappa)
            cached = (self.basis.T @ self.fine_mass.matrix) @ table
            self._caches[("mode_loads", kappa)] = cached
        return cached


def coarse_fem_space(pair, fine_stiffness, fine_mass):
    """Plain coarse P1 space as a Galerkin restriction of the fine forms."""
    B = prolongation_interior(pair).tocsc()
    S = _symmetrized(B.T @ fine_stiffness.matrix @ B)
    M = _symmetrized(B.T @ fine_mass.matrix @ B)
    return GalerkinSubspace(pair, B, S, M, fine_stiffness, fine_mass, label="coarse-fem")


@dataclass
class MultiscaleSpace(GalerkinSubspace):
    """Corrected coarse space: basis columns are hat minus corrector."""

    ell: int = 0
    correctors: sp.csc_matrix = None   # fine-interior x n_basis, patch supports
    coefficient_hash: str = ""

    def basis_column(self, i):
        return FieldVector(FINE_INTERIOR, np.asarray(self.basis[:, i].todense()).ravel())

    def corrector_column(self, i):
        return FieldVector(FINE_INTERIOR, np.asarray(self.correctors[:, i].todense()).ravel())


@dataclass
class ElementCorrector:
    """Patch-local corrector columns of one coarse element."""

    element: int
    ell: int
    dofs: np.ndarray              # global fine vertex ids interior to the patch
    columns: dict                 # coarse vertex id -> values on dofs


def _patch_fine_dofs(pair, patch_elements):
    """Fine vertices interior to the union of the patch elements (and to D)."""
    fine = pair.fine
    fine_els = pair.element_children[patch_elements].ravel()
    verts = fine.elements[fine_els].ravel()
    in_patch_degree = np.bincount(verts, minlength=fine.n_vertices)
    total = fine._caches.get("vertex_degree")
    if total is None:
        total = np.bincount(fine.elements.ravel(), minlength=fine.n_vertices)
        fine._caches["vertex_degree"] = total
    cand = np.unique(verts)
    cand = cand[in_patch_degree[cand] == total[cand]]
    return cand[~fine.boundary_flags[cand]]


def _constraint_rows(pair, patch_elements):
    """Coarse interior vertices whose hats meet the patch."""
    coarse = pair.coarse
    verts = np.unique(coarse.elements[patch_elements].ravel())
    return verts[~coarse.boundary_flags[verts]]


def _element_rhs(pair, stiffness, element):
    """Stiffness action of each coarse hat of `element`, element-K part only.

    Returns (interior coarse vertex ids of K, rhs rows on all fine vertices).
    Summed over all elements these right-hand sides reproduce the full
    stiffness action, which is what makes the element correctors additive.
    """
    if stiffness.local_blocks is None:
        raise TagError("stiffness operator lacks per-element blocks")
    coarse, fine = pair.coarse, pair.fine
    children = pair.element_children[element]
    child_verts = fine.elements[children]                       # (nc, 3)
    blocks = stiffness.local_blocks[children]                   # (nc, 3, 3)
    tri = coarse.element_coordinates()[element][None, :, :]
    pts = fine.vertices[child_verts]                            # (nc, 3, 2)
    lam = _barycentric_values(np.broadcast_to(tri, (len(children), 3, 2)), pts)  # (nc,3,3)
    # rhs[i, vertex a of child] = sum_b blocks[a, b] * lambda_i(vertex b)
    contrib = np.einsum("eab,eib->eia", blocks, lam)
    vert_ids = coarse.elements[element]
    rhs = np.zeros((3, fine.n_vertices))
    for i in range(3):
        np.add.at(rhs[i], child_verts.ravel(), contrib[:, i, :].ravel())
    keep = ~coarse.boundary_flags[vert_ids]
    return vert_ids[keep], rhs[keep]


class _PatchSolver:
    """KKT factorization for one patch, reusable across basis functions."""

    def __init__(self, pair, stiffness, patch_elements):
        self.dofs = _patch_fine_dofs(pair, patch_elements)
        crows = _constraint_rows(pair, patch_elements)
        S_loc = stiffness.full[self.dofs][:, self.dofs].tocsc()
        self.n = len(self.dofs)
        if len(crows) == 0:
            # no coarse interior node constrains the patch: the local kernel
            # space is the whole local space, solve the plain Dirichlet problem
            self.n_con = 0
            self.lu = spla.splu(S_loc)
            self.kkt = S_loc
        else:
            C_loc = interpolation_matrix(pair)[crows][:, self.dofs].tocsc()
            self.n_con = C_loc.shape[0]
            self.kkt = sp.bmat([[S_loc, C_loc.T], [C_loc, None]], format="csc")
            self.lu = spla.splu(self.kkt)

    def solve(self, rhs_on_dofs):
        rhs = np.concatenate([rhs_on_dofs, np.zeros(self.n_con)])
        sol = self.lu.solve(rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0.0:
            res = np.linalg.norm(self.kkt @ sol - rhs) / scale
            if res > KKT_RTOL:
                raise SolverError(f"patch saddle solve residual {res:.3e}")
        return sol[: self.n]


def compute_element_corrector(pair, stiffness, element, ell, _solver_cache=None):
    """Patch-local correctors of one coarse element, one column per interior vertex."""
    if ell < 1:
        raise ValueError(f"ell must be >= 1, got {ell}")
    vert_ids, rhs = _element_rhs(pair, stiffness, element)
    patch = element_patch(pair.coarse, element, ell)
    key = patch.tobytes()
    solver = None if _solver_cache is None else _solver_cache.get(key)
    if solver is None:
        try:
            solver = _PatchSolver(pair, stiffness, patch)
        except (RuntimeError, SolverError) as exc:
            raise CorrectorSolveError(element, str(exc)) from exc
        if _solver_cache is not None:
            # one-slot cache: identical saturated patches arrive consecutively,
            # and holding more factorizations alive would dominate memory
            _solver_cache.clear()
            _solver_cache[key] = solver
    columns = {}
    for i, vert in enumerate(vert_ids):
        try:
            columns[int(vert)] = solver.solve(rhs[i, solver.dofs])
        except SolverError as exc:
            raise CorrectorSolveError(element, str(exc)) from exc
    return ElementCorrector(int(element), int(ell), solver.dofs, columns)


def build_multiscale_space(pair, stiffness, mass, ell, coefficient_hash="", threads=1):
    """Assemble the corrected coarse space with its restricted operators."""
    if ell < 1:
        raise ValueError(f"ell must be >= 1, got {ell}")
    t0 = time.perf_counter()
    coarse, fine = pair.coarse, pair.fine
    # shared precomputation before forking workers
    interpolation_matrix(pair)
    prolongation_interior(pair)
    fine.vertex_to_elements()
    pair.element_parent()

    def worker(chunk):
        # one factorization cache per chunk: identical patches (saturated
        # windows) are factorized once
        cache = {}
        return [
            compute_element_corrector(pair, stiffness, k, ell, _solver_cache=cache)
            for k in chunk
        ]

    elements = [k for k in range(coarse.n_elements)
                if np.any(~coarse.boundary_flags[coarse.elements[k]])]
    if threads <= 1:
        chunks = [elements]
    else:
        n_chunks = min(len(elements), 2 * threads)
        chunks = [list(part) for part in np.array_split(elements, n_chunks)]
    results = [res for part in parallel_map(worker, chunks, threads) for res in part]

    # accumulate corrector columns in element order (deterministic reduction)
    rows, cols, vals = [], [], []
    for res in results:
        local_rows = fine.interior_index[res.dofs]
        for vert in sorted(res.columns):
            rows.append(local_rows)
            cols.append(np.full(len(local_rows), coarse.interior_index[vert]))
            vals.append(res.columns[vert])
    Q = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.n_interior, coarse.n_interior),
    ).tocsc()
    Q.sum_duplicates()

    kernel = interpolation_interior(pair) @ Q
    worst = 0.0 if kernel.nnz == 0 else np.abs(kernel.data).max()
    scale = 1.0 + (np.abs(Q.data).max() if Q.nnz else 0.0)
    if worst > KERNEL_TOL * scale:
        raise SolverError(f"corrector kernel violation {worst:.3e}")

    B = (prolongation_interior(pair).tocsc() - Q).tocsc()
    S_ms = _symmetrized(B.T @ stiffness.matrix @ B)
    M_ms = _symmetrized(B.T @ mass.matrix @ B)
    space = MultiscaleSpace(
        pair, B, S_ms, M_ms, stiffness, mass,
        label="lod", build_seconds=time.perf_counter() - t0,
        ell=ell, correctors=Q, coefficient_hash=coefficient_hash,
    )
    assert space.dimension == coarse.n_interior
    return space


def ms_l2_project(space, v):
    """L2 projection of a fine-interior function onto the subspace."""
    vals = require_tag(v, FINE_INTERIOR, space.pair.fine.n_interior)
    b = space.basis.T @ (space.fine_mass.matrix @ vals)
    x = space.mass_factor().solve(b)
    scale = np.linalg.norm(b)
    if scale > 0.0:
        res = np.linalg.norm(space.mass @ x - b) / scale
        if res > KKT_RTOL:
            raise SolverError(f"subspace mass solve residual {res:.3e}")
    return FieldVector(MS, x)


def global_corrector(pair, stiffness, node):
    """Full-domain corrector of the hat at `node` (small meshes only)."""
    coarse, fine = pair.coarse, pair.fine
    if coarse.boundary_flags[node]:
        raise ValueError(f"node {node} is not interior")
    all_elements = np.arange(coarse.n_elements)
    solver = _PatchSolver(pair, stiffness, all_elements)
    hat = np.zeros(coarse.n_vertices)
    hat[node] = 1.0
    hat_fine = prolongation_matrix(pair) @ hat
    rhs = (stiffness.full @ hat_fine)[solver.dofs]
    q = solver.solve(rhs)
    out = np.zeros(fine.n_interior)
    out[fine.interior_index[solver.dofs]] = q
    return FieldVector(FINE_INTERIOR, out)


def corrector_decay_report(pair, stiffness, node, ell_max):
    """Energy distance between localized and full-domain correctors per ell."""
    coarse, fine = pair.coarse, pair.fine
    exact = global_corrector(pair, stiffness, node).values
    incident = pair.coarse.vertex_to_elements()[node].indices
    report = []
    for ell in range(1, ell_max + 1):
        localized = np.zeros(fine.n_interior)
        cache = {}
        for k in sorted(incident):
            res = compute_element_corrector(pair, stiffness, int(k), ell, _solver_cache=cache)
            if node in res.columns:
                localized[fine.interior_index[res.dofs]] += res.columns[node]
        diff = exact - localized
        d = float(np.sqrt(max(diff @ (stiffness.matrix @ diff), 0.0)))
        report.append((ell, d))
    return report


_CACHE_VERSION = 1


def save_basis_cache(path, space):
    """Persist the corrector columns with their compatibility header."""
    Q = space.correctors.tocsc()
    np.savez_compressed(
        path,
        version=np.array([_CACHE_VERSION]),
        coarse_exponent=np.array([space.pair.coarse.level_exponent]),
        fine_exponent=np.array([space.pair.fine.level_exponent]),
        ell=np.array([space.ell]),
        coefficient_hash=np.array([space.coefficient_hash]),
        indptr=Q.indptr,
        indices=Q.indices,
        data=Q.data,
        shape=np.array(Q.shape),
    )


def load_basis_cache(path, pair, ell, coefficient_hash, stiffness, mass):
    """Rebuild a multiscale space from cached correctors; header must match."""
    with np.load(path, allow_pickle=False) as blob:
        header = {
            "version": int(blob["version"][0]),
            "coarse_exponent": int(blob["coarse_exponent"][0]),
            "fine_exponent": int(blob["fine_exponent"][0]),
            "ell": int(blob["ell"][0]),
            "coefficient_hash": str(blob["coefficient_hash"][0]),
        }
        expected = {
            "version": _CACHE_VERSION,
            "coarse_exponent": pair.coarse.level_exponent,
            "fine_exponent": pair.fine.level_exponent,
            "ell": int(ell),
            "coefficient_hash": coefficient_hash,
        }
        if header != expected:
            raise CacheError(f"incompatible corrector cache {path}: {header} != {expected}")
        Q = sp.csc_matrix(
            (blob["data"], blob["indices"], blob["indptr"]), shape=tuple(blob["shape"])
        )
    B = (prolongation_interior(pair).tocsc() - Q).tocsc()
    S_ms = _symmetrized(B.T @ stiffness.matrix @ B)
    M_ms = _symmetrized(B.T @ mass.matrix @ B)
    return MultiscaleSpace(
        pair, B, S_ms, M_ms, stiffness, mass,
        label="lod", ell=int(ell), correctors=Q, coefficient_hash=coefficient_hash,
    )

"""Nested uniform triangulations of the unit square.

A mesh of level exponent p partitions [0,1]^2 into a 2^p x 2^p grid of cells,
each split into two right triangles along the diagonal from the lower-left to
the upper-right corner (fixed convention, see README). Vertices are numbered
lexicographically, row-major by y then x, which pins the DOF ordering across
runs and worker counts. Meshes are immutable after construction and safe to
share read-only between parallel workers.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass
class Mesh:
    level_exponent: int
    vertices: np.ndarray        # (n_vertices, 2) float
    elements: np.ndarray        # (n_elements, 3) int, counter-clockwise
    boundary_flags: np.ndarray  # (n_vertices,) bool
    interior_index: np.ndarray  # vertex -> contiguous interior DOF, -1 on boundary
    _caches: dict = field(default_factory=dict, repr=False)

    @property
    def width(self):
        return 2.0 ** (-self.level_exponent)

    @property
    def cells_per_side(self):
        return 2 ** self.level_exponent

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def interior_vertices(self):
        """Vertex ids of interior nodes, in interior-DOF order."""
        cached = self._caches.get("interior_vertices")
        if cached is None:
            cached = np.flatnonzero(~self.boundary_flags)
            self._caches["interior_vertices"] = cached
        return cached

    @property
    def n_interior(self):
        return len(self.interior_vertices)

    def vertex_to_elements(self):
        """Sparse incidence (vertex -> incident elements) as CSR."""
        cached = self._caches.get("incidence")
        if cached is None:
            ne = self.n_elements
            rows = self.elements.ravel()
            cols = np.repeat(np.arange(ne), 3)
            cached = sp.csr_matrix(
                (np.ones(len(rows), dtype=np.int8), (rows, cols)),
                shape=(self.n_vertices, ne),
            )
            self._caches["incidence"] = cached
        return cached

    def element_coordinates(self):
        """(n_elements, 3, 2) vertex coordinates per element."""
        return self.vertices[self.elements]


def build_uniform_mesh(level_exponent):
    """Triangulate the unit square with mesh width 2^-level_exponent."""
    if level_exponent < 1:
        raise ValueError(f"level_exponent must be >= 1, got {level_exponent}")
    n = 2 ** level_exponent
    side = np.arange(n + 1) / n
    xs, ys = np.meshgrid(side, side)            # row-major by y then x
    vertices = np.column_stack([xs.ravel(), ys.ravel()])

    ii, jj = np.meshgrid(np.arange(n), np.arange(n))
    ii, jj = ii.ravel(), jj.ravel()             # cell (i, j), y-major order
    ll = jj * (n + 1) + ii
    lr = ll + 1
    ul = ll + (n + 1)
    ur = ul + 1
    lower = np.column_stack([ll, lr, ur])       # below the cell diagonal
    upper = np.column_stack([ll, ur, ul])       # above the cell diagonal
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    gi, gj = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    on_boundary = (gi == 0) | (gi == n) | (gj == 0) | (gj == n)
    boundary_flags = on_boundary.ravel()
    interior_index = np.full(len(vertices), -1, dtype=np.int64)
    interior_index[~boundary_flags] = np.arange((n - 1) ** 2)

    vertices.setflags(write=False)
    elements.setflags(write=False)
    boundary_flags.setflags(write=False)
    interior_index.setflags(write=False)
    return Mesh(level_exponent, vertices, elements, boundary_flags, interior_index)


@dataclass
class LevelPair:
    """A coarse mesh together with one of its dyadic refinements."""

    coarse: Mesh
    fine: Mesh
    element_children: np.ndarray   # (n_coarse_elements, 4^steps) fine element ids
    vertex_embedding: np.ndarray   # coarse vertex -> fine vertex id
    _caches: dict = field(default_factory=dict, repr=False)

    @property
    def steps(self):
        return self.fine.level_exponent - self.coarse.level_exponent

    def element_parent(self):
        """fine element -> containing coarse element."""
        cached = self._caches.get("parent")
        if cached is None:
            nc = self.coarse.n_elements
            cached = np.empty(self.fine.n_elements, dtype=np.int64)
            for k in range(nc):
                cached[self.element_children[k]] = k
            cached.setflags(write=False)
            self._caches["parent"] = cached
        return cached


def refine(mesh, steps):
    """Refine every cell dyadically `steps` times; returns the nested pair."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    fine = build_uniform_mesh(mesh.level_exponent + steps)
    nc = mesh.cells_per_side
    ratio = 2 ** steps

    centroids = fine.element_coordinates().mean(axis=1)
    ci = np.minimum((centroids[:, 0] * nc).astype(np.int64), nc - 1)
    cj = np.minimum((centroids[:, 1] * nc).astype(np.int64), nc - 1)
    u = centroids[:, 0] * nc - ci
    w = centroids[:, 1] * nc - cj
    # centroids never sit on the cell diagonal of a nested refinement
    parent = 2 * (cj * nc + ci) + (w > u)

    order = np.argsort(parent, kind="stable")
    element_children = order.reshape(mesh.n_elements, ratio * ratio)
    element_children.setflags(write=False)

    nf = fine.cells_per_side
    gi, gj = np.meshgrid(np.arange(nc + 1), np.arange(nc + 1))
    vertex_embedding = (gj.ravel() * ratio) * (nf + 1) + gi.ravel() * ratio
    vertex_embedding.setflags(write=False)
    return LevelPair(mesh, fine, element_children, vertex_embedding)


def element_patch(mesh, element, ell):
    """Element ids of the ell-fold vertex-adjacency neighborhood of `element`.

    One round adds every element sharing at least one vertex with the current
    patch; the patch is monotone in ell and saturates at the full element set.
    """
    if ell < 1:
        raise ValueError(f"ell must be >= 1, got {ell}")
    if not 0 <= element < mesh.n_elements:
        raise ValueError(f"invalid element id {element}")
    incidence = mesh.vertex_to_elements()
    patch = np.array([element], dtype=np.int64)
    for _ in range(ell):
        verts = np.unique(mesh.elements[patch].ravel())
        grown = np.unique(incidence[verts].indices)
        if len(grown) == len(patch):
            break
        patch = grown.astype(np.int64)
    return patch

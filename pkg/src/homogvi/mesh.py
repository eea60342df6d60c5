"""Structured simplicial meshes on boxes and periodic unit cells (N = 1 or 2)."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

from .errors import MeshError

__all__ = ["Mesh", "PeriodicMesh", "build_macro_mesh", "build_cell_mesh"]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming simplicial mesh of an axis-aligned box.

    Vertices of the structured grid are numbered lexicographically with the
    first coordinate running fastest.  In 2D every grid square is split along
    its (lo, lo) -> (hi, hi) diagonal.
    """

    dimension: int
    vertices: np.ndarray        # (nv, N)
    elements: np.ndarray        # (ne, N+1) vertex indices
    boundary: np.ndarray        # (nv,) bool
    volumes: np.ndarray         # (ne,)
    box: tuple                  # ((lo, hi), ...)
    shape: tuple                # subdivisions per axis
    _grads: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for a in (self.vertices, self.elements, self.boundary, self.volumes):
            a.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def h(self) -> float:
        """Largest grid spacing over the axes."""
        return max((hi - lo) / n for (lo, hi), n in zip(self.box, self.shape))

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    @property
    def gradients(self) -> np.ndarray:
        """Gradients of the barycentric basis functions, shape (ne, N+1, N)."""
        if self._grads is None:
            g = _basis_gradients(self.vertices, self.elements)
            g.setflags(write=False)
            object.__setattr__(self, "_grads", g)
        return self._grads

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary)

    @property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    def lumped_weights(self) -> np.ndarray:
        """Vertex quadrature weights: each element spreads its volume equally."""
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.elements, np.repeat(self.volumes[:, None] / (self.dimension + 1),
                                              self.dimension + 1, axis=1))
        return w

    def locate(self, points) -> tuple:
        """Element index and barycentric coordinates for each point in the box."""
        pts = np.atleast_2d(np.asarray(points, float))
        N = self.dimension
        cell = []
        frac = []
        for d in range(N):
            lo, hi = self.box[d]
            n = self.shape[d]
            t = (pts[:, d] - lo) / (hi - lo) * n
            i = np.clip(np.floor(t).astype(int), 0, n - 1)
            cell.append(i)
            frac.append(t - i)
        if N == 1:
            el = cell[0]
            lam = np.column_stack([1.0 - frac[0], frac[0]])
            return el, lam
        nx = self.shape[0]
        sq = cell[0] + nx * cell[1]
        s, t = frac
        upper = t > s  # triangle [v00, v11, v01]
        el = 2 * sq + upper.astype(int)
        lam = np.empty((pts.shape[0], 3))
        # lower triangle [v00, v10, v11]: p = v00 + s e1 + t e2
        lam[~upper] = np.column_stack([1 - s, s - t, t])[~upper]
        lam[upper] = np.column_stack([1 - t, s, t - s])[upper]
        return el, lam

    def interpolate(self, nodal, points) -> np.ndarray:
        """Evaluate the P1 function with the given nodal values at ``points``."""
        el, lam = self.locate(points)
        return np.einsum("pk,pk->p", np.asarray(nodal, float)[self.elements[el]], lam)


@dataclass(frozen=True, eq=False)
class PeriodicMesh:
    """Mesh of the closed cell [0, L]^N with opposite faces identified.

    ``dof_of_vertex`` maps each vertex to its periodic degree of freedom and
    ``representative`` maps each dof back to one vertex, so
    ``representative[dof_of_vertex]`` is a projection onto representatives.
    """

    mesh: Mesh
    dof_of_vertex: np.ndarray
    representative: np.ndarray
    n: int
    length: float = 1.0

    def __post_init__(self):
        self.dof_of_vertex.setflags(write=False)
        self.representative.setflags(write=False)

    @property
    def dimension(self) -> int:
        return self.mesh.dimension

    @property
    def n_dofs(self) -> int:
        return self.representative.shape[0]

    @property
    def volume(self) -> float:
        return self.length ** self.dimension

    @property
    def elements(self):
        return self.mesh.elements

    @property
    def volumes(self):
        return self.mesh.volumes

    @property
    def centroids(self):
        return self.mesh.centroids

    @property
    def gradients(self):
        return self.mesh.gradients

    @property
    def dof_elements(self) -> np.ndarray:
        """Element connectivity expressed in periodic dofs."""
        return self.dof_of_vertex[self.mesh.elements]

    def to_vertices(self, dof_values) -> np.ndarray:
        return np.asarray(dof_values)[self.dof_of_vertex]


def _basis_gradients(vertices, elements):
    X = vertices[elements]                      # (ne, N+1, N)
    J = (X[:, 1:, :] - X[:, :1, :])             # (ne, N, N) rows = edge vectors
    Jinv = np.linalg.inv(J)                     # columns give grads of lambda_1..N
    g_rest = np.transpose(Jinv, (0, 2, 1))      # (ne, N, N): row k = grad lambda_{k+1}
    g0 = -g_rest.sum(axis=1, keepdims=True)
    return np.concatenate([g0, g_rest], axis=1)


def _simplex_volumes(vertices, elements, N):
    X = vertices[elements]
    J = X[:, 1:, :] - X[:, :1, :]
    return np.linalg.det(J) / factorial(N)


def _grid(box, shape):
    N = len(shape)
    axes = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(box, shape)]
    if N == 1:
        verts = axes[0][:, None]
        el = np.column_stack([np.arange(shape[0]), np.arange(1, shape[0] + 1)])
        bnd = np.zeros(shape[0] + 1, bool)
        bnd[[0, -1]] = True
        return verts, el, bnd
    nx, ny = shape
    X, Y = np.meshgrid(axes[0], axes[1], indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    i = i.ravel()
    j = j.ravel()
    v00 = i + (nx + 1) * j
    v10 = v00 + 1
    v01 = v00 + (nx + 1)
    v11 = v01 + 1
    el = np.empty((2 * nx * ny, 3), dtype=np.int64)
    el[0::2] = np.column_stack([v00, v10, v11])
    el[1::2] = np.column_stack([v00, v11, v01])
    I, Jv = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="xy")
    bnd = ((I == 0) | (I == nx) | (Jv == 0) | (Jv == ny)).ravel()
    return verts, el, bnd


def build_macro_mesh(box, subdivisions) -> Mesh:
    """Mesh the box ``[(lo_1, hi_1), ..., (lo_N, hi_N)]`` with the given subdivisions."""
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    N = len(box)
    if N not in (1, 2):
        raise MeshError(f"only dimensions 1 and 2 are supported, got {N}")
    if np.isscalar(subdivisions):
        subdivisions = (int(subdivisions),) * N
    shape = tuple(int(s) for s in subdivisions)
    if len(shape) != N:
        raise MeshError("subdivisions must have one entry per axis")
    for (lo, hi), n in zip(box, shape):
        if not lo < hi:
            raise MeshError(f"degenerate box side [{lo}, {hi}]")
        if n < 1:
            raise MeshError(f"subdivisions must be >= 1, got {n}")
    verts, el, bnd = _grid(box, shape)
    vol = _simplex_volumes(verts, el, N)
    if np.any(vol <= 0):
        raise MeshError("non-positive element volume")
    return Mesh(N, verts, el.astype(np.int64), bnd, vol, box, shape)


def build_cell_mesh(n: int, N: int, length: float = 1.0) -> PeriodicMesh:
    """Periodic mesh of [0, length]^N with ``n`` subdivisions per axis."""
    if n < 2:
        raise MeshError(f"cell mesh needs at least 2 subdivisions, got {n}")
    if N not in (1, 2):
        raise MeshError(f"only dimensions 1 and 2 are supported, got {N}")
    mesh = build_macro_mesh([(0.0, float(length))] * N, (n,) * N)
    idx = np.arange(n + 1) % n
    if N == 1:
        dof = idx.copy()
        rep = np.arange(n)
    else:
        I, J = np.meshgrid(idx, idx, indexing="xy")
        dof = (I + n * J).ravel()
        a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        rep = (a + (n + 1) * b).ravel()
    return PeriodicMesh(mesh, dof.astype(np.int64), rep.astype(np.int64), n, float(length))

"""P1 finite elements: assembly, Dirichlet elimination, conjugate gradients, norms.

Quadrature conventions (fixed so that test oracles can reproduce them exactly):

* coefficients are sampled once per element at its centroid (midpoint rule),
  which integrates P1 gradients against element-wise constant data exactly;
* load vectors use the vertex rule ``b_a = sum_e |e|/(N+1) f(x_a)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SolverError, ValidationError
from .mesh import Mesh, PeriodicMesh

__all__ = [
    "QuadratureRule", "CENTROID_RULES", "sample_coefficient", "assemble_stiffness",
    "assemble_mass", "assemble_load", "ReducedSystem", "apply_dirichlet", "cg_solve",
    "CGResult", "l2_norm", "l2_error", "h1_seminorm", "is_symmetric",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights on the reference simplex."""

    points: np.ndarray   # (q, N+1)
    weights: np.ndarray  # (q,) summing to the reference volume


CENTROID_RULES = {
    1: QuadratureRule(np.array([[0.5, 0.5]]), np.array([1.0])),
    2: QuadratureRule(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([0.5])),
}

# Degree-4 Gauss rules, used only for errors against continuous fields.
_GAUSS_1D = np.polynomial.legendre.leggauss(5)
_DUNAVANT_4 = (
    np.array([[0.445948490915965, 0.445948490915965, 0.108103018168070],
              [0.445948490915965, 0.108103018168070, 0.445948490915965],
              [0.108103018168070, 0.445948490915965, 0.445948490915965],
              [0.091576213509771, 0.091576213509771, 0.816847572980459],
              [0.091576213509771, 0.816847572980459, 0.091576213509771],
              [0.816847572980459, 0.091576213509771, 0.091576213509771]]),
    np.array([0.223381589678011, 0.223381589678011, 0.223381589678011,
              0.109951743655322, 0.109951743655322, 0.109951743655322]),
)


def _base(mesh):
    return mesh.mesh if isinstance(mesh, PeriodicMesh) else mesh


def sample_coefficient(mesh, coeff, check=True, sym_tol=1e-12) -> np.ndarray:
    """Return per-element coefficient matrices, shape (ne, N, N).

    ``coeff`` may be a scalar, an (N, N) matrix, an (ne, N, N) array already
    sampled at centroids, or a callable mapping centroids (ne, N) to scalars
    (ne,) or matrices (ne, N, N).
    """
    m = _base(mesh)
    N = m.dimension
    ne = m.n_elements
    c = coeff(m.centroids) if callable(coeff) else coeff
    c = np.asarray(c, dtype=float)
    if c.ndim == 0:
        c = np.broadcast_to(c * np.eye(N), (ne, N, N))
    elif c.shape == (ne,) and ne != N:
        c = c[:, None, None] * np.eye(N)
    elif c.shape == (N, N):
        c = np.broadcast_to(c, (ne, N, N))
    elif c.shape == (ne,) and ne == N:
        raise ValidationError("ambiguous coefficient shape; pass (ne, N, N)")
    if c.shape != (ne, N, N):
        raise ValidationError(f"coefficient has shape {c.shape}, expected {(ne, N, N)}")
    if check:
        if not np.all(np.isfinite(c)):
            raise ValidationError("coefficient has non-finite samples")
        asym = np.abs(c - np.transpose(c, (0, 2, 1))).max()
        scale = max(np.abs(c).max(), 1e-300)
        if asym > sym_tol * scale:
            raise ValidationError(
                f"coefficient not symmetric (a_ij = a_ji violated by {asym:.3e})")
    return c


def assemble_stiffness(mesh, coeff=1.0, check=True) -> sp.csr_matrix:
    """Stiffness matrix of ``int A grad u . grad v`` on a Mesh or PeriodicMesh.

    On a PeriodicMesh the rows/columns are periodic dofs.
    """
    m = _base(mesh)
    A = sample_coefficient(mesh, coeff, check=check)
    G = m.gradients                                      # (ne, k, N)
    local = np.einsum("e,ekn,enm,elm->ekl", m.volumes, G, A, G)
    conn = mesh.dof_elements if isinstance(mesh, PeriodicMesh) else m.elements
    ndof = mesh.n_dofs if isinstance(mesh, PeriodicMesh) else m.n_vertices
    return _scatter(local, conn, ndof)


def assemble_mass(mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix (exact for products of P1 functions)."""
    m = _base(mesh)
    k = m.dimension + 1
    ref = (np.ones((k, k)) + np.eye(k)) / ((k) * (k + 1))
    local = m.volumes[:, None, None] * ref
    conn = mesh.dof_elements if isinstance(mesh, PeriodicMesh) else m.elements
    ndof = mesh.n_dofs if isinstance(mesh, PeriodicMesh) else m.n_vertices
    return _scatter(local, conn, ndof)


def _scatter(local, conn, ndof):
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def assemble_load(mesh, f) -> np.ndarray:
    """Load vector M I_h f: the consistent mass matrix applied to the nodal values of f.

    Exact for P1 loads; ``f`` is a callable on vertices, a scalar or a nodal array.
    """
    m = _base(mesh)
    if callable(f):
        fv = np.asarray(f(m.vertices), float)
    else:
        fv = np.asarray(f, float)
    fv = np.broadcast_to(fv, (m.n_vertices,))
    b = assemble_mass(m) @ fv
    if isinstance(mesh, PeriodicMesh):
        out = np.zeros(mesh.n_dofs)
        np.add.at(out, mesh.dof_of_vertex, b)
        return out
    return b


def is_symmetric(K, rtol=1e-12) -> bool:
    d = abs(K - K.T)
    return d.nnz == 0 or d.max() <= rtol * abs(K).max()


@dataclass
class ReducedSystem:
    """Linear system restricted to free dofs, with the map back to all dofs."""

    K: sp.csr_matrix
    b: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    n: int

    def expand(self, u_free) -> np.ndarray:
        u = np.empty(self.n)
        u[self.free] = u_free
        u[self.fixed] = self.fixed_values
        return u

    def restrict(self, u_full) -> np.ndarray:
        return np.asarray(u_full)[self.free]


def apply_dirichlet(K, b, boundary, value=0.0) -> ReducedSystem:
    """Eliminate the dofs in ``boundary`` with prescribed ``value`` (scalar or array)."""
    K = sp.csr_matrix(K)
    n = K.shape[0]
    fixed = np.unique(np.asarray(boundary, dtype=np.int64))
    mask = np.ones(n, bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    if free.size == 0:
        raise ValidationError("no interior degrees of freedom left after elimination")
    g = np.broadcast_to(np.asarray(value, float), fixed.shape).copy()
    b = np.asarray(b, float)
    Kff = K[free][:, free]
    rhs = b[free]
    if fixed.size and np.any(g != 0):
        rhs = rhs - K[free][:, fixed] @ g
    Kff.sort_indices()
    return ReducedSystem(Kff.tocsr(), rhs, free, fixed, g, n)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float  # relative residual ||b - Kx|| / ||b||


def cg_solve(K, b, tol=1e-10, maxit=None, x0=None, jacobi=False,
             project_constants=False, recenter_every=50) -> np.ndarray:
    """Conjugate gradients for SPD (or SPSD with ``project_constants``) systems.

    Stops when ``||b - Kx|| <= tol * ||b||``.  With ``project_constants`` the
    right-hand side is projected orthogonally to the constants and the iterate
    is re-centred to zero mean every ``recenter_every`` iterations, which is
    how singular periodic systems are handled.  Raises SolverError (carrying
    the last iterate and residual) if ``maxit`` is exhausted.
    """
    return cg(K, b, tol, maxit, x0, jacobi, project_constants, recenter_every).x


def cg(K, b, tol=1e-10, maxit=None, x0=None, jacobi=False,
       project_constants=False, recenter_every=50) -> CGResult:
    b = np.asarray(b, float)
    n = b.shape[0]
    if maxit is None:
        maxit = max(10 * n, 100)
    if project_constants:
        b = b - b.mean()
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, float)
    if project_constants:
        x -= x.mean()
    if bnorm == 0.0:
        return CGResult(np.zeros(n), 0, 0.0)
    r = b - K @ x
    if jacobi:
        dinv = 1.0 / K.diagonal()
        z = dinv * r
    else:
        z = r
    p = z.copy()
    rz = r @ z
    rnorm = np.linalg.norm(r)
    it = 0
    while rnorm > tol * bnorm:
        if it >= maxit:
            raise SolverError(f"CG did not converge in {maxit} iterations "
                              f"(relative residual {rnorm / bnorm:.3e})",
                              iterate=x, residual=rnorm / bnorm)
        Kp = K @ p
        pKp = p @ Kp
        if pKp <= 0:
            raise SolverError("CG breakdown: matrix not positive definite on the search space",
                              iterate=x, residual=rnorm / bnorm)
        alpha = rz / pKp
        x += alpha * p
        r -= alpha * Kp
        it += 1
        if project_constants and it % recenter_every == 0:
            x -= x.mean()
            r = b - K @ x
            r -= r.mean()
        z = dinv * r if jacobi else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        rnorm = np.linalg.norm(r)
    if project_constants:
        x -= x.mean()
    return CGResult(x, it, rnorm / bnorm)


def l2_norm(mesh, u_nodal) -> float:
    u = np.asarray(u_nodal, float)
    M = assemble_mass(mesh)
    return float(np.sqrt(max(u @ (M @ u), 0.0)))


def l2_error(mesh, u_nodal, v) -> float:
    """L2 distance between a P1 function and ``v`` (nodal array or callable field).

    Nodal differences are integrated exactly with the mass matrix; callable
    fields use a degree-4 Gauss rule per element.
    """
    m = _base(mesh)
    u = np.asarray(u_nodal, float)
    if not callable(v):
        return l2_norm(mesh, u - np.asarray(v, float))
    if isinstance(mesh, PeriodicMesh):
        u = mesh.to_vertices(u)
    if m.dimension == 1:
        xg, wg = _GAUSS_1D
        lam1 = (xg + 1) / 2
        lam = np.column_stack([1 - lam1, lam1])
        w = wg / 2
    else:
        lam, w = _DUNAVANT_4
        w = w / 2  # Dunavant weights sum to 1; reference triangle area is 1/2
    X = m.vertices[m.elements]                          # (ne, k, N)
    pts = np.einsum("qk,ekn->eqn", lam, X)              # (ne, q, N)
    uh = np.einsum("qk,ek->eq", lam, u[m.elements])
    vv = np.asarray(v(pts.reshape(-1, m.dimension)), float).reshape(uh.shape)
    jac = m.volumes * (1 if m.dimension == 1 else 2)    # |det J|
    return float(np.sqrt(np.sum(jac[:, None] * w[None, :] * (uh - vv) ** 2)))


def h1_seminorm(mesh, u_nodal) -> float:
    u = np.asarray(u_nodal, float)
    K = assemble_stiffness(mesh, 1.0, check=False)
    return float(np.sqrt(max(u @ (K @ u), 0.0)))

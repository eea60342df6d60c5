"""Corrector cell problems and the homogenized tensor.

The micro problem fixes (x, y) and solves, for each unit vector e_j, the
periodic problem

    M_z[A grad chi^j . grad w] = -M_z[(A e_j) . grad w]   for all periodic w,

then averages Ã = M_z[A (I + grad chi)] with (grad chi)_ij = d chi^j / d z_i.
The meso problem repeats this with Ã in place of A over y, giving the
homogenized tensor A* = M_y[Ã (I + grad theta)].
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, ValidationError
from .fem import assemble_stiffness, cg, sample_coefficient
from .mesh import PeriodicMesh, build_cell_mesh
from .meanvalue import discrete_cell_average, mean_value

log = logging.getLogger(__name__)

__all__ = ["Corrector", "HomogenizedTensor", "solve_cell", "solve_micro", "solve_meso",
           "homogenized_tensor", "DEFAULT_BUDGET"]

DEFAULT_BUDGET = 100_000
CELL_TOL = 1e-12


@dataclass
class Corrector:
    """Nodal corrector columns on a periodic cell and their element gradients.

    ``gradients[e, i, j]`` is d(column j)/d(coordinate i) on element e.
    """

    cellmesh: PeriodicMesh
    columns: np.ndarray          # (n_dofs, N), zero nodal mean
    gradients: np.ndarray        # (ne, N, N)
    anchor: tuple
    kind: str                    # "micro" (chi) or "meso" (theta)
    iterations: int = 0

    def gradient_means(self) -> np.ndarray:
        """Cell average of each gradient entry; zero for periodic correctors."""
        return discrete_cell_average(self.cellmesh, self.gradients, at="elements")


@dataclass
class HomogenizedTensor:
    matrix: np.ndarray
    anchor: tuple
    kind: str                    # "meso" for Ã, "macro" for A*
    energy_matrix: np.ndarray = None
    approximate: bool = False
    refinement_delta: float = None
    extra: dict = field(default_factory=dict)

    def asymmetry(self) -> float:
        M = self.matrix
        return float(np.abs(M - M.T).max() / max(np.abs(M).max(), 1e-300))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T))

    def check(self, alpha=None, beta=None, sym_tol=1e-9, slack=1e-6):
        """Raise ValidationError unless symmetric and inside [alpha - d, beta + d], d = slack*beta."""
        if self.asymmetry() > sym_tol:
            raise ValidationError(
                f"{self.kind} tensor asymmetric ({self.asymmetry():.3e}); "
                "indicates an assembly or quadrature fault")
        ev = self.eigenvalues()
        if alpha is not None and beta is not None:
            d = slack * beta
            if ev.min() < alpha - d or ev.max() > beta + d:
                raise ValidationError(
                    f"{self.kind} tensor eigenvalues {ev} outside [{alpha}, {beta}]")
        elif ev.min() <= 0:
            raise ValidationError(f"{self.kind} tensor not positive definite: {ev}")
        return self


def _rhs(cellmesh, A):
    """Right-hand sides -int (A e_j) . grad w for all j, shape (n_dofs, N)."""
    m = cellmesh.mesh
    G = m.gradients                                         # (ne, k, N)
    local = -np.einsum("e,ekn,enj->ekj", m.volumes, G, A)   # (ne, k, N)
    N = m.dimension
    b = np.zeros((cellmesh.n_dofs, N))
    conn = cellmesh.dof_elements
    for j in range(N):
        np.add.at(b[:, j], conn, local[:, :, j])
    scale = np.abs(local).max()
    return b, scale


def solve_cell(cellmesh: PeriodicMesh, A, anchor=(), kind="micro", tol=CELL_TOL):
    """Solve the N periodic corrector problems for element-wise coefficients ``A``.

    ``A`` is anything accepted by :func:`fem.sample_coefficient`.  Returns the
    Corrector and the averaged tensor (with its energy form for checks).
    """
    A = sample_coefficient(cellmesh, A, sym_tol=1e-12)
    N = cellmesh.dimension
    if np.all(A == A[0]):
        # constant coefficient: the correctors vanish and the average is A itself
        corr = Corrector(cellmesh, np.zeros((cellmesh.n_dofs, N)),
                         np.zeros((cellmesh.mesh.n_elements, N, N)), tuple(anchor), kind)
        return corr, HomogenizedTensor(A[0].copy(), tuple(anchor),
                                       "meso" if kind == "micro" else "macro",
                                       energy_matrix=A[0].copy())
    K = assemble_stiffness(cellmesh, A, check=False)
    b, bscale = _rhs(cellmesh, A)
    cols = np.zeros((cellmesh.n_dofs, N))
    iters = 0
    for j in range(N):
        bj = b[:, j] - b[:, j].mean()
        # a rhs at roundoff level means a (locally) constant coefficient: chi^j = 0
        if np.abs(bj).max() <= 64 * np.finfo(float).eps * bscale * cellmesh.n_dofs ** 0.5:
            continue
        res = cg(K, bj, tol=tol, project_constants=True)
        cols[:, j] = res.x
        iters += res.iterations
    m = cellmesh.mesh
    G = m.gradients
    grads = np.einsum("eki,ekj->eij", G, cols[cellmesh.dof_elements])
    I = np.eye(N)
    w = m.volumes[:, None, None] / cellmesh.volume
    flux = A @ (I + grads)
    averaged = np.sum(w * flux, axis=0)
    energy = np.sum(w * np.transpose(I + grads, (0, 2, 1)) @ flux, axis=0)
    corr = Corrector(cellmesh, cols, grads, tuple(anchor), kind, iters)
    tensor = HomogenizedTensor(averaged, tuple(anchor), "meso" if kind == "micro" else "macro",
                               energy_matrix=energy)
    return corr, tensor


def solve_micro(coeff, cellmesh: PeriodicMesh, anchor=(), tol=CELL_TOL):
    """Micro corrector chi and Ã for a coefficient frozen at (x, y).

    ``coeff`` maps micro points (m, N) to matrices (m, N, N), or is an array
    of per-element matrices.
    """
    return solve_cell(cellmesh, coeff, anchor, "micro", tol)


def solve_meso(atilde_sampler, cellmesh: PeriodicMesh, anchor=(), tol=CELL_TOL):
    """Meso corrector theta and A* for the averaged matrix y -> Ã(y)."""
    return solve_cell(cellmesh, atilde_sampler, anchor, "macro", tol)


def _separable_ratio(coeff, x, y0, y, zpts, rtol=1e-10):
    A0 = coeff(x, y0, zpts)
    A1 = coeff(x, y, zpts)
    k = np.unravel_index(np.argmax(np.abs(A0)), A0.shape)
    s = A1[k] / A0[k]
    if np.abs(A1 - s * A0).max() > rtol * max(np.abs(A1).max(), 1e-300):
        raise ValidationError(
            f"coefficient declared separable but A(x, y, .) is not a multiple of "
            f"A(x, y0, .) at y={np.asarray(y).tolist()}")
    return s


def _cell(n, N, alg):
    if alg.tag == "quasiperiodic":
        L = float(alg.supercell)
        return build_cell_mesh(max(2, int(round(n * L))), N, L)
    return build_cell_mesh(n, N)


def _atilde_at(coeff, x, ycent, micro_mesh, budget, workers):
    """Ã at each meso quadrature point, shape (ne_meso, N, N)."""
    N = coeff.dimension
    alg_z = coeff.algebra_z
    ne = ycent.shape[0]
    if coeff.has("z-independent"):
        return coeff(x, ycent, np.zeros(N)), 0
    if alg_z.tag == "converges-at-infinity":
        # corrector space is trivial: Ã is the limit of A at infinity in z
        out = np.empty((ne, N, N))
        for e in range(ne):
            for i in range(N):
                for j in range(N):
                    out[e, i, j] = mean_value(
                        lambda p, i=i, j=j, e=e: coeff(x, ycent[e], p)[:, i, j],
                        alg_z, N, "z")
        return out, 0
    zc = micro_mesh.centroids
    if coeff.has("y-independent"):
        _, t = solve_micro(coeff(x, ycent[0], zc), micro_mesh, (tuple(x), tuple(ycent[0])))
        return np.broadcast_to(t.matrix, (ne, N, N)).copy(), 1
    if coeff.has("separable"):
        _, t = solve_micro(coeff(x, ycent[0], zc), micro_mesh, (tuple(x), tuple(ycent[0])))
        s = np.array([_separable_ratio(coeff, x, ycent[0], y, zc) for y in ycent])
        return s[:, None, None] * t.matrix, 1
    if ne > budget:
        raise BudgetError(f"{ne} micro solves needed at x={np.asarray(x).tolist()}, "
                          f"budget is {budget}")

    def one(y):
        return solve_micro(coeff(x, y, zc), micro_mesh, (tuple(x), tuple(y)))[1].matrix

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            mats = list(pool.map(one, ycent))
    else:
        mats = [one(y) for y in ycent]
    return np.array(mats), ne


def homogenized_tensor(coeff, x, resolutions=(64, 64), budget=DEFAULT_BUDGET, workers=1,
                       check=True) -> HomogenizedTensor:
    """A*(x) by micro solves at the meso quadrature points followed by a meso solve.

    ``resolutions`` = (n_micro, n_meso) cell subdivisions per unit period.
    Micro solves are shared when A is y-independent or declared separable.
    Quasiperiodic scales use a super-cell of ``algebra.supercell`` periods; the
    result is then flagged approximate with the change from a half-size cell.
    """
    n_micro, n_meso = resolutions
    N = coeff.dimension
    x = np.atleast_1d(np.asarray(x, float))
    approx = "quasiperiodic" in (coeff.algebra_y.tag, coeff.algebra_z.tag)

    def compute(alg_y, alg_z):
        meso_mesh = _cell(n_meso, N, alg_y)
        micro_mesh = _cell(n_micro, N, alg_z)
        ycent = meso_mesh.centroids
        if coeff.algebra_y.tag == "converges-at-infinity" and coeff.has("z-independent"):
            mat = np.array([[mean_value(lambda p, i=i, j=j: coeff(x, p, np.zeros(N))[:, i, j],
                                        alg_y, N, "y") for j in range(N)] for i in range(N)])
            return HomogenizedTensor(mat, tuple(x), "macro"), 0
        at, nsolves = _atilde_at(coeff, x, ycent, micro_mesh, budget, workers)
        if coeff.algebra_y.tag == "converges-at-infinity":
            raise ValidationError("converges-at-infinity meso scale is supported only for "
                                  "z-independent coefficients")
        theta, t = solve_meso(at, meso_mesh, tuple(x))
        t.extra["corrector"] = theta
        return t, nsolves

    t, nsolves = compute(coeff.algebra_y, coeff.algebra_z)
    t.extra["micro_solves"] = nsolves
    if approx:
        from dataclasses import replace
        half = lambda a: replace(a, supercell=a.supercell / 2) if a.tag == "quasiperiodic" else a
        t_half, _ = compute(half(coeff.algebra_y), half(coeff.algebra_z))
        t.approximate = True
        t.refinement_delta = float(np.abs(t.matrix - t_half.matrix).max())
    if check:
        t.check(coeff.alpha, coeff.beta)
    return t

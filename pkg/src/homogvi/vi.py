"""Discrete obstacle problems: minimise 1/2 u'Ku - f'u subject to u >= psi.

Two solvers are provided so that each can check the other: projected SOR
(`solve_psor`) and the primal-dual active set method (`solve_pdas`).  Both
return a :class:`VISolution` whose KKT residuals are computed by
:func:`kkt_report`.  Entries of ``psi`` equal to ``-inf`` are unconstrained.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import SolverError, ValidationError
from .fem import cg

log = logging.getLogger(__name__)

__all__ = ["KKTReport", "VISolution", "kkt_report", "solve_psor", "solve_pdas",
           "solve_vi", "energy"]

DEFAULT_OMEGA = 1.5
DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class KKTReport:
    """KKT residual triple of a candidate solution.

    ``feasibility`` is min(u - psi) over constrained entries, ``dual`` is
    min(Ku - f) (on unconstrained entries -|Ku - f| is used, since there the
    residual must vanish), ``complementarity`` is |(u - psi)'(Ku - f)| over
    constrained entries.  ``scale`` = ||f|| + ||K||_inf ||u|| normalises the
    last two.
    """

    feasibility: float
    dual: float
    complementarity: float
    natural: float
    scale: float

    @property
    def dual_rel(self) -> float:
        return self.dual / self.scale

    @property
    def complementarity_rel(self) -> float:
        return self.complementarity / self.scale

    @property
    def natural_rel(self) -> float:
        return self.natural / self.scale

    def satisfied(self, tol_feas=0.0, tol_dual=DEFAULT_TOL, tol_comp=DEFAULT_TOL) -> bool:
        return (self.feasibility >= -tol_feas
                and self.dual_rel >= -tol_dual
                and self.complementarity_rel <= tol_comp)


@dataclass
class VISolution:
    u: np.ndarray
    active: np.ndarray          # indices with u == psi (within tolerance)
    iterations: int
    kkt: KKTReport
    method: str
    energies: list = field(default_factory=list)

    @property
    def residuals(self) -> tuple:
        return (self.kkt.feasibility, self.kkt.dual, self.kkt.complementarity)


def energy(K, f, u) -> float:
    return float(0.5 * u @ (K @ u) - f @ u)


def _check_inputs(K, f, psi):
    K = sp.csr_matrix(K)
    n = K.shape[0]
    if K.shape != (n, n):
        raise ValidationError("K must be square")
    f = np.asarray(f, float)
    psi = np.broadcast_to(np.asarray(psi, float), (n,)).copy()
    if f.shape != (n,):
        raise ValidationError(f"f has shape {f.shape}, expected ({n},)")
    if np.any(np.isnan(psi)) or np.any(psi == np.inf):
        raise ValidationError("obstacle entries must be finite or -inf")
    d = K.diagonal()
    if np.any(d <= 0):
        raise ValidationError("K must have a strictly positive diagonal")
    K.sort_indices()
    return K, f, psi


def kkt_report(K, f, psi, u) -> KKTReport:
    K = sp.csr_matrix(K)
    u = np.asarray(u, float)
    psi = np.broadcast_to(np.asarray(psi, float), u.shape)
    r = K @ u - f
    con = np.isfinite(psi)
    gap = u[con] - psi[con]
    feas = float(gap.min()) if gap.size else 0.0
    dual_vals = np.where(con, r, -np.abs(r))
    dual = float(dual_vals.min()) if r.size else 0.0
    comp = float(abs(gap @ r[con])) if gap.size else 0.0
    d = K.diagonal()
    nat = np.where(con, np.minimum(d * np.where(con, u - psi, 0.0), r), np.abs(r))
    nat = float(np.abs(nat).max()) if r.size else 0.0
    Knorm = float(abs(K).sum(axis=1).max()) if K.nnz else 0.0
    scale = np.linalg.norm(f) + Knorm * np.linalg.norm(u)
    return KKTReport(feas, dual, comp, nat, scale if scale > 0 else 1.0)


def _active_set(u, psi, atol):
    return np.flatnonzero(np.isfinite(psi) & (u - psi <= atol))


@numba.njit(cache=True)
def _psor_sweeps(indptr, indices, data, f, psi, u, omega, sweeps):
    n = u.shape[0]
    for _ in range(sweeps):
        for i in range(n):
            s = f[i]
            diag = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j == i:
                    diag = data[k]
                else:
                    s -= data[k] * u[j]
            v = (1.0 - omega) * u[i] + omega * s / diag
            u[i] = v if v > psi[i] else psi[i]


def solve_psor(K, f, psi, omega=DEFAULT_OMEGA, tol=DEFAULT_TOL, maxit=100000,
               u0=None, check_every=1) -> VISolution:
    """Projected SOR.

    Each sweep is a Gauss-Seidel pass with over-relaxation ``omega`` followed
    by pointwise projection onto u >= psi, so feasibility holds exactly.  The
    residuals are checked every ``check_every`` sweeps; iteration stops when
    the relative dual, complementarity and natural residuals are all below
    ``tol``.
    """
    if not 0.0 < omega < 2.0:
        raise ValidationError(f"relaxation parameter must lie in (0, 2), got {omega}")
    K, f, psi = _check_inputs(K, f, psi)
    n = K.shape[0]
    u = np.zeros(n) if u0 is None else np.array(u0, float)
    u = np.maximum(u, psi)
    energies = [energy(K, f, u)]
    it = 0
    rep = kkt_report(K, f, psi, u)
    while not (rep.satisfied(0.0, tol, tol) and rep.natural_rel <= tol):
        if it >= maxit:
            raise SolverError(
                f"PSOR did not converge in {maxit} sweeps (natural residual "
                f"{rep.natural_rel:.3e})", iterate=u, residual=rep)
        k = min(check_every, maxit - it)
        _psor_sweeps(K.indptr, K.indices, K.data, f, psi, u, omega, k)
        it += k
        energies.append(energy(K, f, u))
        rep = kkt_report(K, f, psi, u)
    return VISolution(u, _active_set(u, psi, 0.0), it, rep, "psor", energies)


def _is_tridiagonal(K):
    coo = K.tocoo()
    return bool(np.all(np.abs(coo.row - coo.col) <= 1))


def _tridiagonal_solve(K, b):
    n = K.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = K.diagonal(1)
    ab[1] = K.diagonal()
    ab[2, :-1] = K.diagonal(-1)
    return scipy.linalg.solve_banded((1, 1), ab, b, check_finite=False)


def _linear_solve(K, b, method, x0, cg_tol):
    if K.shape[0] == 0:
        return np.zeros(0)
    if method == "banded":
        return _tridiagonal_solve(K, b)
    return cg(K, b, tol=cg_tol, x0=x0, jacobi=True).x


def solve_pdas(K, f, psi, c=1.0, maxit=None, linear_solver="auto",
               cg_tol=1e-13, u0=None) -> VISolution:
    """Primal-dual active set method.

    The active set is predicted as {i : lambda_i + c (psi_i - u_i) > 0},
    where lambda = Ku - f on the active set and zero elsewhere; the method
    stops when the prediction reproduces the current set.  ``linear_solver``
    selects the inner solver for the inactive block: ``"cg"`` (Jacobi
    preconditioned), ``"banded"`` (tridiagonal elimination, for 1D meshes) or
    ``"auto"`` (banded when K is tridiagonal).  ``u0`` seeds the first active
    set; by default the unconstrained solution is used.  ``maxit`` defaults to
    2n + 10.
    """
    if c <= 0:
        raise ValidationError(f"PDAS parameter c must be positive, got {c}")
    K, f, psi = _check_inputs(K, f, psi)
    n = K.shape[0]
    if maxit is None:
        maxit = 2 * n + 10
    if linear_solver == "auto":
        linear_solver = "banded" if _is_tridiagonal(K) else "cg"
    if linear_solver not in ("cg", "banded"):
        raise ValidationError(f"unknown linear solver {linear_solver!r}")
    con = np.isfinite(psi)
    if u0 is None:
        u = _linear_solve(K, f, linear_solver, None, cg_tol)
    else:
        u = np.array(u0, float)
    lam = np.zeros(n)
    active = con & (lam + c * (np.where(con, psi, 0.0) - u) > 0)
    history = []
    for it in range(1, maxit + 1):
        inactive = ~active
        u_new = np.where(active, psi, 0.0)
        I = np.flatnonzero(inactive)
        A = np.flatnonzero(active)
        rhs = f[I] - K[I][:, A] @ psi[A] if A.size else f[I]
        u_new[I] = _linear_solve(K[I][:, I], rhs, linear_solver, u[I], cg_tol)
        u = u_new
        lam = np.zeros(n)
        if A.size:
            lam[A] = (K[A] @ u) - f[A]
        new_active = con & (lam + c * (np.where(con, psi, 0.0) - u) > 0)
        if np.array_equal(new_active, active):
            rep = kkt_report(K, f, psi, u)
            return VISolution(u, A, it, rep, "pdas")
        history.append(np.flatnonzero(active))
        active = new_active
    raise SolverError(
        f"PDAS did not settle in {maxit} iterations; last active sets "
        f"{history[-2:] if len(history) >= 2 else history}",
        iterate=u, residual=kkt_report(K, f, psi, u),
        last_active_sets=history[-2:])


def solve_vi(K, f, psi, method="pdas", **options) -> VISolution:
    """Dispatch to ``solve_psor`` or ``solve_pdas`` by name."""
    if method == "psor":
        return solve_psor(K, f, psi, **options)
    if method == "pdas":
        return solve_pdas(K, f, psi, **options)
    raise ValidationError(f"unknown VI method {method!r}")

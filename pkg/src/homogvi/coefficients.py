"""Coefficient and obstacle descriptions built from expression strings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import ValidationError
from .fem import h1_seminorm, l2_norm
from .meanvalue import PERIODIC, AlgebraSpec

__all__ = ["CoefficientSpec", "ObstacleSpec", "HINTS"]

HINTS = ("x-independent", "y-independent", "z-independent", "separable")


def _parse_all(entries, N):
    out = []
    for row in entries:
        out.append(tuple(e if not isinstance(e, (str, int, float))
                         else ex.parse(str(e), N) for e in row))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class CoefficientSpec:
    """The matrix A(x, y, z) with its ellipticity bounds and per-scale algebras.

    ``entries`` may be given as strings; they are parsed on construction.  A
    single-entry list ``[[a]]`` with N > 1 means the scalar coefficient a*I.
    Independence hints are derived from the expressions; ``separable`` (A =
    s(x, y) B(x, z) with scalar s) must be declared.
    """

    dimension: int
    entries: tuple
    alpha: float
    beta: float
    algebra_y: AlgebraSpec = PERIODIC
    algebra_z: AlgebraSpec = PERIODIC
    hints: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        N = self.dimension
        if N not in (1, 2):
            raise ValidationError(f"dimension must be 1 or 2, got {N}")
        entries = _parse_all(self.entries, N)
        if len(entries) == 1 and len(entries[0]) == 1 and N > 1:
            a = entries[0][0]
            zero = ex.Num(0.0)
            entries = tuple(tuple(a if i == j else zero for j in range(N)) for i in range(N))
        if len(entries) != N or any(len(r) != N for r in entries):
            raise ValidationError(f"coefficient must have {N}x{N} entries")
        if not 0 < self.alpha <= self.beta:
            raise ValidationError(f"need 0 < alpha <= beta, got {self.alpha}, {self.beta}")
        object.__setattr__(self, "entries", entries)
        hints = set(self.hints)
        unknown = hints - set(HINTS)
        if unknown:
            raise ValidationError(f"unknown hints {sorted(unknown)}")
        used = set()
        for row in entries:
            for e in row:
                used |= ex.scales_used(e)
        for s in "xyz":
            if s not in used:
                hints.add(f"{s}-independent")
        object.__setattr__(self, "hints", frozenset(hints))

    def has(self, hint) -> bool:
        return hint in self.hints

    def __call__(self, x, y, z) -> np.ndarray:
        """Sample A at points; each argument broadcasts to (m, N).  Returns (m, N, N)."""
        N = self.dimension
        x, y, z = (np.atleast_2d(np.asarray(v, float)) for v in (x, y, z))
        m = max(x.shape[0], y.shape[0], z.shape[0])
        out = np.empty((m, N, N))
        for i in range(N):
            for j in range(N):
                out[:, i, j] = np.broadcast_to(ex.evaluate(self.entries[i][j], x, y, z), (m,))
        return out

    def frozen(self, x, y):
        """Sampler z -> A(x, y, z) for fixed macro and meso points."""
        return lambda pts: self(x, y, pts)

    def frozen_x(self, x):
        """Sampler y -> A(x, y, .); meaningful when A does not depend on z."""
        return lambda pts: self(x, pts, np.zeros(self.dimension))

    def scaled(self, c: float) -> "CoefficientSpec":
        entries = tuple(tuple(ex.BinOp("*", ex.Num(float(c)), e) for e in row)
                        for row in self.entries)
        return CoefficientSpec(self.dimension, entries, c * self.alpha, c * self.beta,
                               self.algebra_y, self.algebra_z,
                               self.hints & {"separable"})

    def validate(self, box=None, n_samples=1000, seed=0, sym_tol=1e-10) -> dict:
        """Check symmetry, finiteness and the ellipticity band by random sampling.

        Raises ValidationError on failure; returns sampled eigenvalue extremes.
        """
        N = self.dimension
        rng = np.random.default_rng(seed)
        box = box or [(0.0, 1.0)] * N
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        x = lo + (hi - lo) * rng.random((n_samples, N))

        def scale_points(alg):
            if alg.tag == "periodic":
                return rng.random((n_samples, N))
            R = alg.radii[-1]
            return (2 * rng.random((n_samples, N)) - 1) * R

        y = scale_points(self.algebra_y)
        z = scale_points(self.algebra_z)
        A = self(x, y, z)
        if not np.all(np.isfinite(A)):
            k = int(np.flatnonzero(~np.isfinite(A).all(axis=(1, 2)))[0])
            raise ValidationError(
                f"coefficient is not finite at x={x[k]}, y={y[k]}, z={z[k]}")
        for i in range(N):
            for j in range(i + 1, N):
                if self.entries[i][j] == self.entries[j][i]:
                    continue
                d = np.abs(A[:, i, j] - A[:, j, i]).max()
                if d > sym_tol * max(1.0, np.abs(A).max()):
                    raise ValidationError(
                        f"coefficient not symmetric: a_{i+1}{j+1} != a_{j+1}{i+1} "
                        f"(max difference {d:.3e}); hypothesis a_ij = a_ji")
        ev = np.linalg.eigvalsh(0.5 * (A + np.transpose(A, (0, 2, 1))))
        emin, emax = float(ev.min()), float(ev.max())
        slack = 1e-12 * self.beta
        if emin < self.alpha - slack or emax > self.beta + slack:
            raise ValidationError(
                f"sampled eigenvalues [{emin:.6g}, {emax:.6g}] leave the declared "
                f"ellipticity band [{self.alpha}, {self.beta}]")
        return {"eig_min": emin, "eig_max": emax}


@dataclass(frozen=True, eq=False)
class ObstacleSpec:
    """Obstacle family psi_eps(x) = psi0(x) + eps^p g(x, x/eps) and its limit psi0.

    ``eps_power`` is p (default 1).  Choosing p = 2 for y-dependent g keeps
    psi_eps -> psi0 strongly in H^1.
    """

    dimension: int
    psi0: object
    g: object = "0"
    eps_power: float = 1.0

    def __post_init__(self):
        for name in ("psi0", "g"):
            v = getattr(self, name)
            if isinstance(v, (str, int, float)):
                object.__setattr__(self, name, ex.parse(str(v), self.dimension))
        if "z" in ex.scales_used(self.psi0) | ex.scales_used(self.g) or \
                "y" in ex.scales_used(self.psi0):
            raise ValidationError("psi0 may depend on x only and g on (x, y) only")

    def limit(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        return np.broadcast_to(ex.evaluate(self.psi0, x=pts), pts.shape[:1]).astype(float)

    def at(self, eps: float, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        gv = np.broadcast_to(ex.evaluate(self.g, x=pts, y=pts / eps), pts.shape[:1])
        return self.limit(pts) + eps ** self.eps_power * gv

    def check_boundary(self, mesh, tol=0.0):
        """psi0 <= 0 on the boundary, so that the limit constraint set is nonempty."""
        vals = self.limit(mesh.vertices[mesh.boundary])
        if np.any(vals > tol):
            k = int(np.argmax(vals))
            raise ValidationError(
                f"obstacle limit is positive on the boundary (max {vals[k]:.3e}); "
                "the constraint set would be empty")

    def h1_defects(self, mesh, eps_list) -> list:
        """Discrete H^1 norms of psi_eps - psi0 on ``mesh`` for each eps."""
        V = mesh.vertices
        p0 = self.limit(V)
        out = []
        for e in eps_list:
            d = self.at(e, V) - p0
            out.append(float(np.hypot(l2_norm(mesh, d), h1_seminorm(mesh, d))))
        return out

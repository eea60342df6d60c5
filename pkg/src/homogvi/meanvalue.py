"""Mean values over one oscillation scale for three algebra classes.

* ``periodic``: the average over the unit cell, computed with the uniform
  composite midpoint rule (spectrally accurate for smooth periodic fields).
* ``quasiperiodic``: averages over growing boxes [-R, R]^N with a convergence
  gate on the last two radii.  When the field is syntactically a finite
  trigonometric polynomial, its constant Fourier term is returned instead.
* ``converges-at-infinity``: the limit at infinity, probed along the diagonal
  ray at the radius schedule with a Cauchy gate.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import reduce

import numpy as np

from . import expr as ex
from .errors import MeanValueError, ValidationError
from .mesh import PeriodicMesh

__all__ = [
    "AlgebraSpec", "PERIODIC", "mean_value", "trig_constant_term", "box_average",
    "PartialMean", "partial_mean_z", "partial_mean_y", "discrete_cell_average",
]

TAGS = ("periodic", "quasiperiodic", "converges-at-infinity")


@dataclass(frozen=True)
class AlgebraSpec:
    tag: str = "periodic"
    frequencies: tuple = ()
    radii: tuple = (32.0, 128.0, 512.0)
    resolution: int = 256          # periodic cell points per axis
    tol: float = 1e-3              # convergence gate (relative change)
    points_per_wave: int = 12      # quasiperiodic box quadrature density
    supercell: float = 8.0         # cell length for quasiperiodic correctors

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValidationError(f"unknown algebra tag {self.tag!r}; expected one of {TAGS}")
        if self.tag == "quasiperiodic" and len(self.frequencies) == 0:
            raise ValidationError("quasiperiodic algebra needs a nonempty frequency list")
        r = np.asarray(self.radii, float)
        if r.size < 2 or np.any(np.diff(r) <= 0) or r[0] <= 0:
            raise ValidationError("radius schedule must be positive and strictly increasing")
        if self.resolution < 2:
            raise ValidationError("periodic resolution must be >= 2")
        object.__setattr__(self, "frequencies", tuple(float(w) for w in self.frequencies))
        object.__setattr__(self, "radii", tuple(float(v) for v in r))

    @classmethod
    def from_dict(cls, d) -> "AlgebraSpec":
        d = dict(d)
        if "radii" in d:
            d["radii"] = tuple(d["radii"])
        if "frequencies" in d:
            d["frequencies"] = tuple(d["frequencies"])
        return cls(**d)


PERIODIC = AlgebraSpec()
_EXPR_TYPES = (ex.Num, ex.Const, ex.Var, ex.BinOp, ex.Neg, ex.Call)


def _as_sampler(field, scale, dimension, fixed):
    """Turn an Expr or callable into f(points (m, N)) -> (m,)."""
    if not isinstance(field, _EXPR_TYPES):
        return field
    other = set(ex.scales_used(field)) - {scale} - set(fixed)
    if other:
        raise ValidationError(
            f"field references scales {sorted(other)} besides {scale!r}; bind them via 'fixed'")

    def sampler(points):
        pts = np.asarray(points, float)
        binds = {k: np.broadcast_to(np.asarray(v, float), pts.shape) for k, v in fixed.items()}
        binds[scale] = pts
        return np.broadcast_to(ex.evaluate(field, **binds), pts.shape[:-1])

    return sampler


def cell_points(n, dimension, length=1.0):
    """Midpoints of a uniform n^N grid on [0, length)^N, shape (n^N, N)."""
    t = (np.arange(n) + 0.5) * (length / n)
    grids = np.meshgrid(*([t] * dimension), indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def _periodic_mean(sampler, dimension, n):
    pts = cell_points(n, dimension)
    return float(np.mean(sampler(pts)))


def box_average(sampler, dimension, R, points_per_unit, chunk=1 << 20):
    """Average of ``sampler`` over [-R, R]^N with composite 3-point Gauss panels."""
    panels = max(1, int(np.ceil(2 * R * points_per_unit / 3)))
    g, w = np.polynomial.legendre.leggauss(3)
    edges = np.linspace(-R, R, panels + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    nodes = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    if dimension == 1:
        total = 0.0
        for s in range(0, nodes.size, chunk):
            total += float(weights[s:s + chunk] @ sampler(nodes[s:s + chunk, None]))
        return total / (2 * R)
    total = 0.0
    rows = max(1, chunk // nodes.size)
    for s in range(0, nodes.size, rows):
        y2 = nodes[s:s + rows]
        P = np.column_stack([np.tile(nodes, y2.size), np.repeat(y2, nodes.size)])
        vals = sampler(P).reshape(y2.size, nodes.size)
        total += float(weights[s:s + rows] @ (vals @ weights))
    return total / (2 * R) ** 2


def _quasiperiodic_mean(sampler, dimension, alg):
    wmax = max(abs(w) for w in alg.frequencies)
    ppu = max(alg.points_per_wave * wmax / (2 * np.pi), 4.0)
    trace = [(R, box_average(sampler, dimension, R, ppu)) for R in alg.radii]
    (_, a_prev), (_, a_last) = trace[-2], trace[-1]
    if abs(a_last - a_prev) > alg.tol * max(abs(a_last), 1.0):
        raise MeanValueError("box averages did not settle across the radius schedule", trace)
    return a_last


def _infinity_mean(sampler, dimension, alg):
    direction = np.ones(dimension) / np.sqrt(dimension)
    pts = np.asarray(alg.radii)[:, None] * direction[None, :]
    vals = np.asarray(sampler(pts), float)
    trace = list(zip(alg.radii, vals.tolist()))
    if abs(vals[-1] - vals[-2]) > alg.tol * max(abs(vals[-1]), 1.0):
        raise MeanValueError("values along the probe ray are not Cauchy", trace)
    return float(vals[-1])


def mean_value(field, algebra: AlgebraSpec = PERIODIC, dimension: int = 1, scale="y",
               fixed=None, exact=True) -> float:
    """Mean value of ``field`` (Expr or callable on (m, N) points) over ``scale``.

    ``fixed`` binds the other scales, e.g. ``{"x": [0.3]}``.  With ``exact``
    and a quasiperiodic algebra, trigonometric polynomials are averaged by
    reading off their constant Fourier term.
    """
    fixed = dict(fixed or {})
    if algebra.tag == "quasiperiodic" and exact and isinstance(field, _EXPR_TYPES):
        dc = trig_constant_term(field, scale)
        if dc is not None:
            return dc
    sampler = _as_sampler(field, scale, dimension, fixed)
    if algebra.tag == "periodic":
        return _periodic_mean(sampler, dimension, algebra.resolution)
    if algebra.tag == "quasiperiodic":
        return _quasiperiodic_mean(sampler, dimension, algebra)
    return _infinity_mean(sampler, dimension, algebra)


# -- finite trigonometric polynomials ---------------------------------------

def _key(freq):
    return tuple(round(w, 10) + 0.0 for w in freq)


def _affine(node, scale):
    """(constant, {index: coefficient}) if node is affine in ``scale``, else None."""
    if not ex.variables(node):
        v = ex.evaluate(node)
        return (v, {}) if np.isfinite(v) else None
    if isinstance(node, ex.Var):
        return (0.0, {node.index: 1.0}) if node.scale == scale else None
    if isinstance(node, ex.Neg):
        a = _affine(node.operand, scale)
        return None if a is None else (-a[0], {k: -v for k, v in a[1].items()})
    if isinstance(node, ex.BinOp):
        a = _affine(node.left, scale)
        b = _affine(node.right, scale)
        if a is None or b is None:
            return None
        if node.op in "+-":
            s = 1.0 if node.op == "+" else -1.0
            lin = dict(a[1])
            for k, v in b[1].items():
                lin[k] = lin.get(k, 0.0) + s * v
            return a[0] + s * b[0], lin
        if node.op == "*":
            if not a[1]:
                return a[0] * b[0], {k: a[0] * v for k, v in b[1].items()}
            if not b[1]:
                return a[0] * b[0], {k: b[0] * v for k, v in a[1].items()}
            return None
        if node.op == "/" and not b[1] and b[0] != 0:
            return a[0] / b[0], {k: v / b[0] for k, v in a[1].items()}
    return None


def _poly_mul(p, q):
    out = {}
    for kp, cp in p.items():
        for kq, cq in q.items():
            k = _key(a + b for a, b in zip(kp, kq))
            out[k] = out.get(k, 0.0) + cp * cq
    return out


def _poly_add(p, q, s=1.0):
    out = dict(p)
    for k, c in q.items():
        out[k] = out.get(k, 0.0) + s * c
    return out


def _trig(node, scale, dim):
    zero = (0.0,) * dim
    if not ex.variables(node):
        v = ex.evaluate(node)
        return {zero: complex(v)} if np.isfinite(v) else None
    if isinstance(node, ex.Var):
        return None
    if isinstance(node, ex.Neg):
        p = _trig(node.operand, scale, dim)
        return None if p is None else {k: -c for k, c in p.items()}
    if isinstance(node, ex.BinOp):
        a = _trig(node.left, scale, dim)
        if node.op == "^":
            b = _affine(node.right, scale)
            if a is None or b is None or b[1]:
                return None
            e = b[0]
            if e != int(e) or e < 0 or e > 64:
                return None
            return reduce(_poly_mul, [a] * int(e), {zero: 1.0 + 0j})
        b = _trig(node.right, scale, dim)
        if a is None or b is None:
            return None
        if node.op == "+":
            return _poly_add(a, b)
        if node.op == "-":
            return _poly_add(a, b, -1.0)
        if node.op == "*":
            return _poly_mul(a, b)
        if node.op == "/":
            if set(b) == {zero} and b[zero] != 0:
                return {k: c / b[zero] for k, c in a.items()}
            return None
    if isinstance(node, ex.Call) and node.func in ("sin", "cos"):
        aff = _affine(node.args[0], scale)
        if aff is None:
            return None
        c0, lin = aff
        if any(k > dim for k in lin):
            return None
        w = _key(lin.get(i + 1, 0.0) for i in range(dim))
        wm = _key(-v for v in w)
        ep = np.exp(1j * c0)
        if node.func == "cos":
            return _poly_add({w: ep / 2}, {wm: np.conj(ep) / 2})
        return _poly_add({w: ep / 2j}, {wm: -np.conj(ep) / 2j})
    return None


def trig_constant_term(field, scale="y"):
    """Constant Fourier coefficient if ``field`` is a finite trig polynomial in ``scale``.

    Returns None when the expression is not recognised as one (or references
    other scales).
    """
    if not isinstance(field, _EXPR_TYPES):
        return None
    used = ex.variables(field)
    if any(s != scale for s, _ in used):
        return None
    dim = max([i for _, i in used], default=1)
    p = _trig(field, scale, dim)
    if p is None:
        return None
    return float(p.get((0.0,) * dim, 0.0).real)


# -- partial means ----------------------------------------------------------

class PartialMean:
    """Field of the remaining variables obtained by averaging over one scale.

    Calling it with points of shape (N,) or (m, N) returns the mean at each
    point.  Results are cached per point; the cache is guarded by a lock so
    concurrent callers see the same deterministic values.
    """

    def __init__(self, field, algebra, dimension, over, keep, fixed=None):
        self.field = field
        self.algebra = algebra
        self.dimension = dimension
        self.over = over
        self.keep = keep
        self.fixed = dict(fixed or {})
        self._cache = {}
        self._lock = threading.Lock()
        self._independent = isinstance(field, _EXPR_TYPES) and over not in ex.scales_used(field)

    def _one(self, point):
        key = tuple(float(v) for v in point)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        fixed = dict(self.fixed)
        fixed[self.keep] = np.asarray(key)
        if self._independent:
            binds = {k: np.asarray(v, float) for k, v in fixed.items()}
            val = float(ex.evaluate(self.field, **binds))
        else:
            val = mean_value(self.field, self.algebra, self.dimension, self.over, fixed)
        with self._lock:
            self._cache.setdefault(key, val)
            return self._cache[key]

    def __call__(self, points):
        pts = np.asarray(points, float)
        if pts.ndim == 1:
            return self._one(pts)
        return np.array([self._one(p) for p in pts])


def partial_mean_z(field, algebra_z: AlgebraSpec = PERIODIC, dimension=1, fixed=None):
    """y -> M_z[field(y, .)]."""
    return PartialMean(field, algebra_z, dimension, over="z", keep="y", fixed=fixed)


def partial_mean_y(field, algebra_y: AlgebraSpec = PERIODIC, dimension=1, fixed=None):
    """z -> M_y[field(., z)]."""
    return PartialMean(field, algebra_y, dimension, over="y", keep="z", fixed=fixed)


def discrete_cell_average(cellmesh: PeriodicMesh, values, at="nodes") -> float:
    """Cell average of a discrete field.

    ``at="nodes"``: P1 values, given per periodic dof or per vertex, integrated
    exactly.  ``at="elements"``: one value per element (quadrature point),
    weighted by element volume.
    """
    v = np.asarray(values, float)
    m = cellmesh.mesh
    if at == "elements":
        if v.shape[0] != m.n_elements:
            raise ValidationError(f"expected {m.n_elements} element values, got {v.shape[0]}")
        w = m.volumes.reshape((-1,) + (1,) * (v.ndim - 1))
        return np.sum(w * v, axis=0) / cellmesh.volume
    if at != "nodes":
        raise ValidationError(f"unknown location {at!r}")
    if v.shape[0] == cellmesh.n_dofs:
        v = v[cellmesh.dof_of_vertex]
    elif v.shape[0] != m.n_vertices:
        raise ValidationError("nodal values must be given per dof or per vertex")
    w = m.lumped_weights().reshape((-1,) + (1,) * (v.ndim - 1))
    return np.sum(w * v, axis=0) / cellmesh.volume

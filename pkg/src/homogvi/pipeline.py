"""End-to-end drivers: homogenized field, macro and epsilon obstacle solves,
convergence studies and the multiscale-convergence check."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import expr as ex
from .cell import DEFAULT_BUDGET, HomogenizedTensor, homogenized_tensor
from .coefficients import CoefficientSpec, ObstacleSpec
from .errors import ResolutionError, ValidationError
from .fem import (apply_dirichlet, assemble_load, assemble_stiffness, h1_seminorm, l2_error,
                  l2_norm)
from .meanvalue import cell_points
from .mesh import Mesh, build_macro_mesh
from .vi import VISolution, solve_vi

log = logging.getLogger(__name__)

__all__ = [
    "HomogenizedField", "MacroSolution", "build_homogenized_field", "solve_homogenized_vi",
    "solve_epsilon_vi", "fastest_period", "fine_subdivisions", "StudyConfig", "StudyRow",
    "StudyReport", "convergence_study", "h1_bound", "multiscale_check", "MultiscaleRow",
    "format_float", "CSV_SCHEMA",
]

CSV_SCHEMA = "# schema=1"
STUDY_COLUMNS = ("eps", "h", "l2_error", "h1_seminorm", "active_volume_eps",
                 "active_volume_hom", "iters", "seconds")


def format_float(v) -> str:
    return "%.17g" % v


def _as_field(f, N):
    """Callable x-points (m, N) -> (m,) from an Expr, string, number or callable."""
    if isinstance(f, str):
        f = ex.parse(f, N)
    if isinstance(f, (int, float)):
        c = float(f)
        return lambda p: np.full(np.atleast_2d(p).shape[0], c)
    if callable(f):
        return f
    return lambda p: np.broadcast_to(ex.evaluate(f, x=np.atleast_2d(p)),
                                     np.atleast_2d(p).shape[:1]).astype(float)


@dataclass
class HomogenizedField:
    """A* sampled at the centroid of each macro element."""

    mesh: Mesh
    tensors: np.ndarray                  # (ne, N, N)
    samples: list                        # HomogenizedTensor objects computed
    shared: bool                         # one tensor for all elements

    @property
    def matrix(self):
        return self.samples[0].matrix if self.shared else None


def build_homogenized_field(coeff: CoefficientSpec, macro_mesh: Mesh, resolutions=(64, 64),
                            budget=DEFAULT_BUDGET, workers=1) -> HomogenizedField:
    N = coeff.dimension
    ne = macro_mesh.n_elements
    if coeff.has("x-independent"):
        t = homogenized_tensor(coeff, macro_mesh.centroids[0], resolutions, budget, workers)
        return HomogenizedField(macro_mesh, np.broadcast_to(t.matrix, (ne, N, N)), [t], True)
    if coeff.has("y-independent") and coeff.has("z-independent"):
        A = coeff(macro_mesh.centroids, np.zeros(N), np.zeros(N))
        ts = [HomogenizedTensor(a, tuple(x), "macro") for a, x in zip(A, macro_mesh.centroids)]
        return HomogenizedField(macro_mesh, A, ts, False)
    used = 0
    ts = []
    for x in macro_mesh.centroids:
        t = homogenized_tensor(coeff, x, resolutions, budget - used, workers)
        used += t.extra.get("micro_solves", 0)
        ts.append(t)
    return HomogenizedField(macro_mesh, np.array([t.matrix for t in ts]), ts, False)


@dataclass
class MacroSolution:
    """Obstacle-problem solution on a macro/fine mesh with full nodal vectors."""

    mesh: Mesh
    u: np.ndarray                 # nodal values, zero on the boundary
    psi: np.ndarray               # nodal obstacle
    active: np.ndarray            # active vertex indices
    vi: VISolution                # solution of the reduced (interior) problem
    eps: float = None
    formulation: str = "direct"

    @property
    def kkt(self):
        return self.vi.kkt

    @property
    def iterations(self):
        return self.vi.iterations

    def h1_seminorm(self) -> float:
        return h1_seminorm(self.mesh, self.u)

    def active_volume(self) -> float:
        return float(self.mesh.lumped_weights()[self.active].sum())


def _solve_obstacle(mesh, A, f, psi, method, solver, formulation="direct", eps=None,
                    initial=None):
    K = assemble_stiffness(mesh, A, check=False)
    b = assemble_load(mesh, _as_field(f, mesh.dimension))
    red = apply_dirichlet(K, b, mesh.boundary_vertices, 0.0)
    psi_I = psi[red.free]
    if initial is not None:
        solver = dict(solver, u0=red.restrict(initial))
    if formulation == "direct":
        sol = solve_vi(red.K, red.b, psi_I, method, **solver)
        u_I = sol.u
    elif formulation == "shifted":
        # u = uhat + psi with uhat >= 0; the boundary part of psi cancels since u = 0 there
        rhs = red.b - red.K @ psi_I
        if initial is not None:
            solver["u0"] = solver["u0"] - psi_I
        sol = solve_vi(red.K, rhs, np.zeros_like(psi_I), method, **solver)
        u_I = sol.u + psi_I
    else:
        raise ValidationError(f"unknown formulation {formulation!r}")
    u = red.expand(u_I)
    active = red.free[sol.active]
    return MacroSolution(mesh, u, psi, active, sol, eps, formulation)


def _tensor_field(field_or_matrix, mesh):
    if isinstance(field_or_matrix, HomogenizedField):
        if field_or_matrix.mesh is not mesh and not field_or_matrix.shared:
            raise ValidationError("homogenized field was built on a different mesh")
        if field_or_matrix.shared:
            return field_or_matrix.matrix
        return field_or_matrix.tensors
    return field_or_matrix


def solve_homogenized_vi(field, f, obstacle: ObstacleSpec, macro_mesh: Mesh, method="pdas",
                         solver=None, initial=None) -> MacroSolution:
    """Homogenized obstacle problem with coefficient A* and obstacle psi0, zero Dirichlet data.

    ``field`` is a HomogenizedField, an (N, N) matrix or per-element matrices.
    ``initial`` is an optional nodal starting guess.
    """
    obstacle.check_boundary(macro_mesh, tol=1e-12)
    A = _tensor_field(field, macro_mesh)
    psi = obstacle.limit(macro_mesh.vertices)
    return _solve_obstacle(macro_mesh, A, f, psi, method, dict(solver or {}), initial=initial)


def fastest_period(coeff: CoefficientSpec, eps: float) -> float:
    """Length of the fastest oscillation period of A(x, x/eps, x/eps^2) (inf if none)."""
    if not coeff.has("z-independent"):
        return eps ** 2
    if not coeff.has("y-independent"):
        return eps
    return np.inf


def fine_subdivisions(coeff, eps, box, points_per_period=8, max_subdivisions=None):
    period = fastest_period(coeff, eps)
    out = []
    for lo, hi in box:
        n = 1 if np.isinf(period) else int(np.ceil(points_per_period * (hi - lo) / period - 1e-9))
        if max_subdivisions is not None and n > max_subdivisions:
            raise ResolutionError(
                f"eps={eps} needs {n} subdivisions per axis for {points_per_period} points "
                f"per period, above the cap {max_subdivisions}")
        out.append(n)
    return tuple(out)


def _check_resolution(coeff, eps, mesh, min_points, guard):
    period = fastest_period(coeff, eps)
    if np.isinf(period):
        return
    h = mesh.h
    if h * min_points > period * (1 + 1e-9):
        msg = (f"fine mesh does not resolve the fastest scale at eps={eps}: h={h:.4g} "
               f"but at least {min_points} elements per period {period:.4g} are required")
        if guard == "fail":
            raise ResolutionError(msg)
        warnings.warn(msg, stacklevel=3)


def solve_epsilon_vi(coeff: CoefficientSpec, eps: float, f, obstacle: ObstacleSpec,
                     fine_mesh: Mesh, method="pdas", solver=None, formulation="shifted",
                     guard="fail", min_points=8, initial=None) -> MacroSolution:
    """The oscillating obstacle problem with A(x, x/eps, x/eps^2) sampled at centroids.

    ``formulation="shifted"`` solves for u - psi_eps against a zero obstacle
    and adds psi_eps back; ``"direct"`` imposes u >= psi_eps directly.
    ``initial`` is an optional nodal starting guess (e.g. the homogenized
    solution).
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    _check_resolution(coeff, eps, fine_mesh, min_points, guard)
    xc = fine_mesh.centroids
    A = coeff(xc, xc / eps, xc / eps ** 2)
    psi = obstacle.at(eps, fine_mesh.vertices)
    bmax = psi[fine_mesh.boundary].max()
    if bmax > 1e-12:
        raise ValidationError(f"psi_eps is positive on the boundary ({bmax:.3e}) at eps={eps}")
    return _solve_obstacle(fine_mesh, A, f, psi, method, dict(solver or {}), formulation, eps,
                           initial)


# -- convergence studies ----------------------------------------------------

@dataclass
class StudyConfig:
    coeff: CoefficientSpec
    obstacle: ObstacleSpec
    f: object
    box: tuple
    eps_list: tuple
    points_per_period: int = 8
    min_points: int = 8
    max_subdivisions: int = None
    macro_subdivisions: tuple = None      # None: solve u0 on every fine mesh
    resolutions: tuple = (64, 64)
    budget: int = DEFAULT_BUDGET
    method: str = "pdas"
    solver: dict = field(default_factory=dict)
    check_equivalence: bool = True
    guard: str = "fail"
    workers: int = 1
    timings: bool = False
    error_floor: float = 1e-10            # errors below this count as converged


@dataclass
class StudyRow:
    eps: float
    h: float
    l2_error: float
    h1_seminorm: float
    active_volume_eps: float
    active_volume_hom: float
    iters: int
    seconds: float


@dataclass
class StudyReport:
    rows: list
    tensors: list
    h1_bound: float
    equivalence_gap: float = None
    u0_feasibility: float = None
    kkt: list = field(default_factory=list)
    timings: bool = False
    error_floor: float = 0.0

    @property
    def errors(self):
        return np.array([r.l2_error for r in self.rows])

    def strictly_decreasing(self, floor=None) -> bool:
        """Each error is below its predecessor; errors under ``floor`` count as converged."""
        floor = self.error_floor if floor is None else floor
        e = self.errors
        return bool(np.all((np.diff(e) < 0) | (e[1:] <= floor)))

    def error_ratio(self) -> float:
        e = self.errors
        return float(e[-1] / e[0]) if e[0] > 0 else 0.0

    def h1_bounded(self) -> bool:
        return all(r.h1_seminorm <= self.h1_bound for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_SCHEMA + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for r in self.rows:
            secs = r.seconds if self.timings else 0.0
            w.writerow([format_float(r.eps), format_float(r.h), format_float(r.l2_error),
                        format_float(r.h1_seminorm), format_float(r.active_volume_eps),
                        format_float(r.active_volume_hom), str(r.iters), format_float(secs)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "schema": 1,
            "rows": [asdict(r) for r in self.rows],
            "tensors": [np.asarray(t).tolist() for t in self.tensors],
            "h1_bound": self.h1_bound,
            "h1_bounded": self.h1_bounded(),
            "strictly_decreasing": self.strictly_decreasing(),
            "error_ratio": self.error_ratio(),
            "equivalence_gap": self.equivalence_gap,
            "u0_feasibility": self.u0_feasibility,
            "kkt": self.kkt,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def h1_bound(coeff, obstacle, f, meshes, eps_list) -> float:
    """Explicit a priori bound on |u_eps|_{H^1} valid for every eps in the study.

    sqrt(2K/alpha) with K = C1 ||f|| + C2^2 ||f||^2 / alpha + C^2 / alpha, where
    C1 bounds ||psi_eps^+||_{L2}, C = beta * max ||grad psi_eps^+|| and C2 is
    the Poincare constant of the box.  psi^+ is taken as the nodal interpolant,
    which is admissible for the discrete problems.
    """
    alpha, beta = coeff.alpha, coeff.beta
    box = meshes[0].box
    C2 = 1.0 / (np.pi * np.sqrt(sum(1.0 / (hi - lo) ** 2 for lo, hi in box)))
    fx = _as_field(f, coeff.dimension)
    fnorm = 0.0
    C1 = 0.0
    C = 0.0
    for mesh, eps in zip(meshes, eps_list):
        fnorm = max(fnorm, l2_error(mesh, np.zeros(mesh.n_vertices), fx),
                    float(np.sqrt(mesh.lumped_weights() @ fx(mesh.vertices) ** 2)))
        pp = np.maximum(obstacle.at(eps, mesh.vertices), 0.0)
        pp[mesh.boundary] = 0.0
        C1 = max(C1, l2_norm(mesh, pp))
        C = max(C, beta * h1_seminorm(mesh, pp))
    K = C1 * fnorm + C2 ** 2 * fnorm ** 2 / alpha + C ** 2 / alpha
    return float(np.sqrt(2 * K / alpha))


def convergence_study(cfg: StudyConfig) -> StudyReport:
    """Solve the eps-problems and the homogenized problem, and tabulate ||u_eps - u0||."""
    eps = np.asarray(cfg.eps_list, float)
    if eps.size < 2 or np.any(np.diff(eps) >= 0):
        raise ValidationError("eps list must have at least two strictly decreasing values")
    coeff = cfg.coeff
    box = tuple(tuple(b) for b in cfg.box)
    coeff.validate(box)
    if np.isinf(fastest_period(coeff, eps[0])):
        # nothing oscillates: every eps shares the macro mesh
        if cfg.macro_subdivisions is None:
            raise ValidationError("coefficient does not oscillate; set macro_subdivisions "
                                  "to choose the mesh")
        subs = [tuple(cfg.macro_subdivisions)] * eps.size
    else:
        subs = [fine_subdivisions(coeff, e, box, cfg.points_per_period, cfg.max_subdivisions)
                for e in eps]
    meshes = [build_macro_mesh(box, s) for s in subs]
    for e, m in zip(eps, meshes):
        _check_resolution(coeff, e, m, cfg.min_points, cfg.guard)
    cfg.obstacle.check_boundary(meshes[0], tol=1e-12)

    shared = {}

    def homogenized(mesh, initial=None):
        if "field" in shared:
            hf = shared["field"]
        else:
            hf = build_homogenized_field(coeff, mesh, cfg.resolutions, cfg.budget, cfg.workers)
            if hf.shared:
                shared["field"] = hf
        sol = solve_homogenized_vi(hf, cfg.f, cfg.obstacle, mesh, cfg.method, cfg.solver,
                                   initial)
        return sol, hf

    # u0 on every mesh that needs it, each seeded from the previous (coarser) one
    tensors = []
    u0_on = []
    if cfg.macro_subdivisions is not None:
        macro = build_macro_mesh(box, cfg.macro_subdivisions)
        u0, hf = homogenized(macro)
        tensors.append(hf.tensors[0] if hf.shared else hf.tensors)
        u0_on = [(u0, macro.interpolate(u0.u, m.vertices)) for m in meshes]
    else:
        prev = None
        for m in meshes:
            init = None if prev is None else prev.mesh.interpolate(prev.u, m.vertices)
            u0, hf = homogenized(m, init)
            if not tensors:
                tensors.append(hf.tensors[0] if hf.shared else hf.tensors)
            u0_on.append((u0, u0.u))
            prev = u0

    def run(k):
        t0 = time.perf_counter()
        sol = solve_epsilon_vi(coeff, eps[k], cfg.f, cfg.obstacle, meshes[k], cfg.method,
                               cfg.solver, "shifted", cfg.guard, cfg.min_points,
                               initial=u0_on[k][1])
        return sol, time.perf_counter() - t0

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run, range(len(eps))))
    else:
        results = [run(k) for k in range(len(eps))]

    rows = []
    kkt = []
    feas = np.inf
    for k, (sol, secs) in enumerate(results):
        mesh = meshes[k]
        u0, u0_fine = u0_on[k]
        feas = min(feas, float(np.min(u0.u - u0.psi)))
        err = l2_error(mesh, sol.u, u0_fine)
        rows.append(StudyRow(float(eps[k]), float(mesh.h), err, sol.h1_seminorm(),
                             sol.active_volume(), u0.active_volume(), int(sol.iterations), secs))
        kkt.append({"eps": float(eps[k]), "feasibility": sol.kkt.feasibility,
                    "dual_rel": sol.kkt.dual_rel,
                    "complementarity_rel": sol.kkt.complementarity_rel})
    gap = None
    if cfg.check_equivalence:
        direct = solve_epsilon_vi(coeff, eps[0], cfg.f, cfg.obstacle, meshes[0], cfg.method,
                                  cfg.solver, "direct", cfg.guard, cfg.min_points,
                                  initial=u0_on[0][1])
        gap = float(np.abs(direct.u - results[0][0].u).max())
    bound = h1_bound(coeff, cfg.obstacle, cfg.f, meshes, eps)
    return StudyReport(rows, tensors, bound, gap, feas, kkt, cfg.timings, cfg.error_floor)


# -- multiscale convergence check -------------------------------------------

@dataclass
class MultiscaleRow:
    eps: float
    integral: float
    limit: float

    @property
    def gap(self) -> float:
        return abs(self.integral - self.limit)


def _gauss_grid(box, panels, order=4):
    g, w = np.polynomial.legendre.leggauss(order)
    axes = []
    weights = []
    for (lo, hi), n in zip(box, panels):
        edges = np.linspace(lo, hi, n + 1)
        half = np.diff(edges) / 2
        mid = (edges[:-1] + edges[1:]) / 2
        axes.append((mid[:, None] + half[:, None] * g).ravel())
        weights.append((half[:, None] * w).ravel())
    return axes, weights


def _integrate(fun, box, panels, chunk=1 << 20):
    axes, weights = _gauss_grid(box, panels)
    if len(box) == 1:
        pts = axes[0][:, None]
        total = 0.0
        for s in range(0, pts.shape[0], chunk):
            total += float(weights[0][s:s + chunk] @ fun(pts[s:s + chunk]))
        return total
    total = 0.0
    rows = max(1, chunk // axes[0].size)
    for s in range(0, axes[1].size, rows):
        y2 = axes[1][s:s + rows]
        P = np.column_stack([np.tile(axes[0], y2.size), np.repeat(y2, axes[0].size)])
        vals = fun(P).reshape(y2.size, axes[0].size)
        total += float(weights[1][s:s + rows] @ (vals @ weights[0]))
    return total


def multiscale_check(w, phi, v, eps_list, box, dimension=None, panels_per_period=8,
                     max_points=2 * 10 ** 7, limit_panels=64, cell_resolution=None):
    """Oscillatory integrals I_eps = int w(x) phi(x/eps, x/eps^2) v(x, x/eps, x/eps^2) dx
    against their limit int M[w phi v](x) dx (periodic mean over y and z jointly).

    ``w`` is an expression in x, ``phi`` in (y, z), ``v`` in (x, y, z).
    """
    box = tuple(tuple(map(float, b)) for b in box)
    N = dimension or len(box)
    w, phi, v = (ex.parse(str(e), N) if isinstance(e, (str, int, float)) else e
                 for e in (w, phi, v))
    if ex.scales_used(w) - {"x"} or "x" in ex.scales_used(phi):
        raise ValidationError("w must depend on x only and phi on (y, z) only")
    used = ex.scales_used(phi) | ex.scales_used(v)

    def integrand_eps(e):
        def fun(p):
            vals = ex.evaluate(w, x=p) * ex.evaluate(phi, y=p / e, z=p / e ** 2) \
                * ex.evaluate(v, x=p, y=p / e, z=p / e ** 2)
            return np.broadcast_to(vals, p.shape[:1])
        return fun

    rows = []
    res = cell_resolution or (64 if N == 1 else 12)
    cell = cell_points(res, N)
    if "y" in used and "z" in used:
        Y = np.repeat(cell, cell.shape[0], axis=0)
        Z = np.tile(cell, (cell.shape[0], 1))
    else:
        Y = Z = cell

    def limit_fun(p):
        out = np.empty(p.shape[0])
        for k in range(p.shape[0]):
            x = p[k]
            vals = ex.evaluate(w, x=x) * ex.evaluate(phi, y=Y, z=Z) * ex.evaluate(v, x=x, y=Y, z=Z)
            out[k] = np.mean(np.broadcast_to(vals, Y.shape[:1]))
        return out

    lpanels = (limit_panels if N == 1 else max(4, limit_panels // 8),) * N
    limit = _integrate(limit_fun, box, lpanels)
    for e in eps_list:
        if "z" in used:
            period = e ** 2
        elif "y" in used:
            period = e
        else:
            period = 1.0
        panels = tuple(max(1, int(np.ceil(panels_per_period * (hi - lo) / period - 1e-9)))
                       for lo, hi in box)
        npts = int(np.prod(panels)) * 4 ** N
        if npts > max_points:
            raise ResolutionError(
                f"eps={e}: resolving the oscillation needs {npts} quadrature points, "
                f"above the limit {max_points}")
        rows.append(MultiscaleRow(float(e), _integrate(integrand_eps(e), box, panels), limit))
    return rows

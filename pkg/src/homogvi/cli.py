"""Command-line front end.

    homogvi cell|solve-eps|solve-hom|study|mscheck --config run.json --out-dir out/

Everything except the two paths lives in the JSON config, which is checked
against ``data/config.schema.json`` before anything runs.  Exit codes: 0 on
success, 2 for configuration errors, 3 for solver failures and 4 when a
study's monotone-decrease assertion fails.  Failures print one JSON object
on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy.sparse as sp

from . import pipeline as pl
from .cell import DEFAULT_BUDGET, _cell, homogenized_tensor, solve_micro
from .coefficients import CoefficientSpec, ObstacleSpec
from .errors import (BudgetError, ConfigError, ExprError, HomogviError, MeanValueError,
                     MeshError, ResolutionError, SolverError, ValidationError)
from .meanvalue import AlgebraSpec
from .mesh import build_macro_mesh
from .vi import solve_vi

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ASSERTION = 4

COMMANDS = ("cell", "solve-eps", "solve-hom", "study", "mscheck")


class AssertionFailure(HomogviError):
    """A requested numerical assertion (e.g. monotone decrease) did not hold."""


def load_schema() -> dict:
    text = resources.files("homogvi").joinpath("data/config.schema.json").read_text()
    return json.loads(text)


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config schema violation at {where}: {exc.message}") from exc


def _require(cfg, *keys):
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"this command needs a '{k}' block in the config")


# -- config -> library objects ------------------------------------------------

def _box(cfg):
    N = cfg["dimension"]
    box = cfg.get("box", [[0.0, 1.0]] * N)
    if len(box) != N:
        raise ConfigError(f"box has {len(box)} intervals for dimension {N}")
    return tuple((float(a), float(b)) for a, b in box)


def _algebra(block, cell):
    d = dict(block or {"tag": "periodic"})
    if "supercell" in cell and "supercell" not in d:
        d["supercell"] = cell["supercell"]
    return AlgebraSpec.from_dict(d)


def coefficient_from(cfg) -> CoefficientSpec:
    _require(cfg, "coefficient")
    c = cfg["coefficient"]
    cell = cfg.get("cell", {})
    return CoefficientSpec(cfg["dimension"], c["entries"], float(c["alpha"]), float(c["beta"]),
                           _algebra(c.get("algebra_y"), cell),
                           _algebra(c.get("algebra_z"), cell),
                           frozenset(c.get("hints", ())))


def obstacle_from(cfg) -> ObstacleSpec:
    _require(cfg, "obstacle")
    o = cfg["obstacle"]
    return ObstacleSpec(cfg["dimension"], o["psi0"], o.get("g", "0"),
                        float(o.get("eps_power", 1.0)))


def solver_from(cfg):
    """(method, options, formulation) from the solver block."""
    s = dict(cfg.get("solver", {}))
    method = s.pop("method", "pdas")
    formulation = s.pop("formulation", "shifted")
    opts = {}
    if method == "psor":
        for k in ("omega", "tol", "maxit"):
            if k in s:
                opts[k] = s[k]
        ignored = set(s) - {"omega", "tol", "maxit"}
    else:
        for k in ("c", "maxit", "linear_solver"):
            if k in s:
                opts[k] = s[k]
        if "tol" in s:
            opts["cg_tol"] = s["tol"]
        ignored = set(s) - {"c", "maxit", "linear_solver", "tol"}
    if ignored:
        log.warning("solver options %s do not apply to %s", sorted(ignored), method)
    return method, opts, formulation


def _resolutions(cfg):
    cell = cfg.get("cell", {})
    return (int(cell.get("n_micro", 64)), int(cell.get("n_meso", 64)))


# -- writers ---------------------------------------------------------------

def _fmt(v):
    return pl.format_float(float(v))


def nodal_csv(points, columns: dict) -> str:
    """CSV with coordinate columns x1.. followed by the named nodal columns."""
    points = np.atleast_2d(points)
    buf = io.StringIO()
    buf.write(pl.CSV_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i + 1}" for i in range(points.shape[1])] + list(columns))
    cols = [np.asarray(c) for c in columns.values()]
    for k in range(points.shape[0]):
        row = [_fmt(p) for p in points[k]]
        for c in cols:
            row.append(str(int(c[k])) if c.dtype == bool else _fmt(c[k]))
        w.writerow(row)
    return buf.getvalue()


def _write(out_dir: Path, name: str, text: str) -> Path:
    path = out_dir / name
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _kkt_dict(kkt):
    return {"feasibility": kkt.feasibility, "dual": kkt.dual,
            "complementarity": kkt.complementarity, "natural": kkt.natural,
            "scale": kkt.scale, "dual_rel": kkt.dual_rel,
            "complementarity_rel": kkt.complementarity_rel}


# -- commands --------------------------------------------------------------

def cmd_cell(cfg, out_dir: Path) -> int:
    """Correctors at one (x, y) and the tensors Ã(x, y) and A*(x)."""
    coeff = coefficient_from(cfg)
    N = coeff.dimension
    cell = cfg.get("cell", {})
    box = _box(cfg)
    x = np.asarray(cell.get("x", [0.5 * (a + b) for a, b in box]), float)
    y = np.asarray(cell.get("y", [0.0] * N), float)
    if x.size != N or y.size != N:
        raise ConfigError(f"cell.x and cell.y need {N} components")
    n_micro, n_meso = _resolutions(cfg)
    coeff.validate(box)
    t = homogenized_tensor(coeff, x, (n_micro, n_meso), int(cell.get("budget", DEFAULT_BUDGET)),
                           int(cell.get("workers", 1)))
    micro_mesh = _cell(n_micro, N, coeff.algebra_z)
    chi, at = solve_micro(coeff(x, y, micro_mesh.centroids), micro_mesh, (tuple(x), tuple(y)))
    at.check(coeff.alpha, coeff.beta)
    pts = micro_mesh.mesh.vertices[micro_mesh.representative]
    _write(out_dir, "chi.csv",
           nodal_csv(pts, {f"chi{j + 1}": chi.columns[:, j] for j in range(N)}))
    theta = t.extra.get("corrector")
    if theta is not None:
        cm = theta.cellmesh
        pts = cm.mesh.vertices[cm.representative]
        _write(out_dir, "theta.csv",
               nodal_csv(pts, {f"theta{j + 1}": theta.columns[:, j] for j in range(N)}))
    report = {
        "schema": 1,
        "x": x.tolist(), "y": y.tolist(),
        "atilde": at.matrix.tolist(),
        "atilde_energy": at.energy_matrix.tolist(),
        "astar": t.matrix.tolist(),
        "astar_energy": None if t.energy_matrix is None else t.energy_matrix.tolist(),
        "approximate": t.approximate,
        "refinement_delta": t.refinement_delta,
        "micro_solves": t.extra.get("micro_solves", 0),
        "resolutions": [n_micro, n_meso],
    }
    _write(out_dir, "matrices.json", _dump(report))
    return EXIT_OK


def _solve_system(cfg, out_dir):
    s = cfg["system"]
    K = np.asarray(s["K"], float)
    f = np.asarray(s["f"], float)
    psi = np.array([-np.inf if p is None else p for p in s["psi"]], float)
    n = f.size
    if K.shape != (n, n) or psi.size != n:
        raise ConfigError("system block: K must be n x n with f and psi of length n")
    if not np.allclose(K, K.T):
        raise ValidationError("system matrix must be symmetric")
    method, opts, _ = solver_from(cfg)
    sol = solve_vi(sp.csr_matrix(K), f, psi, method, **opts)
    active = np.zeros(n, bool)
    active[sol.active] = True
    _write(out_dir, "solution.csv",
           nodal_csv(np.arange(n, dtype=float)[:, None], {"u": sol.u, "active": active}))
    _write(out_dir, "kkt.json", _dump({"schema": 1, "method": sol.method,
                                       "iterations": sol.iterations, **_kkt_dict(sol.kkt)}))
    return EXIT_OK


def _write_solution(out_dir, sol, extra):
    active = np.zeros(sol.u.size, bool)
    active[sol.active] = True
    _write(out_dir, "solution.csv",
           nodal_csv(sol.mesh.vertices, {"u": sol.u, "psi": sol.psi, "active": active}))
    info = {"schema": 1, "method": sol.vi.method, "iterations": sol.iterations,
            "active_volume": sol.active_volume(), "h1_seminorm": sol.h1_seminorm(),
            **extra, **_kkt_dict(sol.kkt)}
    _write(out_dir, "kkt.json", _dump(info))


def cmd_solve(cfg, out_dir: Path, which: str) -> int:
    """Solve the epsilon problem (``which="eps"``) or the homogenized one (``"hom"``)."""
    if "system" in cfg:
        return _solve_system(cfg, out_dir)
    coeff = coefficient_from(cfg)
    obstacle = obstacle_from(cfg)
    box = _box(cfg)
    f = cfg.get("load", 0.0)
    method, opts, formulation = solver_from(cfg)
    mesh_cfg = cfg.get("mesh", {})
    coeff.validate(box)
    if which == "eps":
        _require(cfg, "eps")
        eps = float(cfg["eps"])
        if "subdivisions" in mesh_cfg:
            subs = tuple(mesh_cfg["subdivisions"])
        else:
            subs = pl.fine_subdivisions(coeff, eps, box, mesh_cfg.get("points_per_period", 8),
                                        mesh_cfg.get("max_subdivisions"))
        mesh = build_macro_mesh(box, subs)
        sol = pl.solve_epsilon_vi(coeff, eps, f, obstacle, mesh, method, opts, formulation,
                                  mesh_cfg.get("guard", "fail"), mesh_cfg.get("min_points", 8))
        extra = {"eps": eps, "formulation": formulation}
    else:
        subs = tuple(mesh_cfg.get("subdivisions", [64] * coeff.dimension))
        mesh = build_macro_mesh(box, subs)
        cell = cfg.get("cell", {})
        hf = pl.build_homogenized_field(coeff, mesh, _resolutions(cfg),
                                        int(cell.get("budget", DEFAULT_BUDGET)),
                                        int(cell.get("workers", 1)))
        sol = pl.solve_homogenized_vi(hf, f, obstacle, mesh, method, opts)
        extra = {"astar": hf.samples[0].matrix.tolist() if hf.shared else None}
    _write_solution(out_dir, sol, extra)
    return EXIT_OK


def study_config_from(cfg) -> pl.StudyConfig:
    _require(cfg, "study")
    st = cfg["study"]
    mesh_cfg = cfg.get("mesh", {})
    cell = cfg.get("cell", {})
    method, opts, _ = solver_from(cfg)
    macro = st.get("macro_subdivisions")
    return pl.StudyConfig(
        coeff=coefficient_from(cfg), obstacle=obstacle_from(cfg), f=cfg.get("load", 0.0),
        box=_box(cfg), eps_list=tuple(float(e) for e in st["eps_list"]),
        points_per_period=int(mesh_cfg.get("points_per_period", 8)),
        min_points=int(mesh_cfg.get("min_points", 8)),
        max_subdivisions=mesh_cfg.get("max_subdivisions"),
        macro_subdivisions=tuple(macro) if macro else None,
        resolutions=_resolutions(cfg), budget=int(cell.get("budget", DEFAULT_BUDGET)),
        method=method, solver=opts, check_equivalence=bool(st.get("check_equivalence", True)),
        guard=mesh_cfg.get("guard", "fail"), workers=int(cell.get("workers", 1)),
        timings=bool(st.get("timings", False)),
        error_floor=float(st.get("error_floor", 1e-10)))


def cmd_study(cfg, out_dir: Path) -> int:
    """Convergence study; exit 0 iff the L2 errors decrease strictly."""
    report = pl.convergence_study(study_config_from(cfg))
    st = cfg["study"]
    _write(out_dir, st.get("csv", "study.csv"), report.to_csv())
    _write(out_dir, st.get("json", "study.json"), report.to_json() + "\n")
    if not report.strictly_decreasing():
        raise AssertionFailure(
            "L2 errors are not strictly decreasing: "
            + ", ".join(_fmt(e) for e in report.errors))
    return EXIT_OK


def cmd_mscheck(cfg, out_dir: Path) -> int:
    """Table of oscillatory integrals against their mean-value limit."""
    _require(cfg, "mscheck")
    m = cfg["mscheck"]
    kw = {}
    if "panels_per_period" in m:
        kw["panels_per_period"] = m["panels_per_period"]
    if "max_points" in m:
        kw["max_points"] = m["max_points"]
    rows = pl.multiscale_check(m["w"], m["phi"], m["v"], m["eps_list"], _box(cfg),
                               cfg["dimension"], **kw)
    buf = io.StringIO()
    buf.write(pl.CSV_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eps", "integral", "limit", "gap"])
    for r in rows:
        w.writerow([_fmt(r.eps), _fmt(r.integral), _fmt(r.limit), _fmt(r.gap)])
    _write(out_dir, m.get("csv", "mscheck.csv"), buf.getvalue())
    return EXIT_OK


# -- entry point -----------------------------------------------------------

def _exit_code(exc) -> int:
    if isinstance(exc, AssertionFailure):
        return EXIT_ASSERTION
    if isinstance(exc, (SolverError, MeanValueError)):
        return EXIT_SOLVER
    if isinstance(exc, (ConfigError, ValidationError, ExprError, MeshError, ResolutionError,
                        BudgetError)):
        return EXIT_CONFIG
    return EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="homogvi",
        description="Reiterated homogenization of obstacle problems: cell problems, "
                    "epsilon and homogenized solves, convergence studies.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out-dir", required=True, help="directory for CSV/JSON outputs")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def run(command, cfg, out_dir) -> int:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if command == "cell":
        return cmd_cell(cfg, out_dir)
    if command == "solve-eps":
        return cmd_solve(cfg, out_dir, "eps")
    if command == "solve-hom":
        return cmd_solve(cfg, out_dir, "hom")
    if command == "study":
        return cmd_study(cfg, out_dir)
    if command == "mscheck":
        return cmd_mscheck(cfg, out_dir)
    raise ConfigError(f"unknown command {command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return run(args.command, cfg, args.out_dir)
    except HomogviError as exc:
        code = _exit_code(exc)
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code,
               "command": args.command}
        if isinstance(exc, SolverError) and exc.residual is not None:
            r = exc.residual
            err["residual"] = _kkt_dict(r) if hasattr(r, "dual_rel") else float(r)
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())

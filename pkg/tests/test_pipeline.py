import numpy as np
import pytest

from homogvi import pipeline as pl
from homogvi.coefficients import CoefficientSpec, ObstacleSpec
from homogvi.errors import ResolutionError, ValidationError
from homogvi.fem import apply_dirichlet, assemble_load, assemble_stiffness, cg_solve
from homogvi.mesh import build_macro_mesh
from oracles import REITERATED_1D, obstacle_1d_exact

UNIT = [(0.0, 1.0)]
SEP = "(2 + sin(2*pi*y1))*(2 + sin(2*pi*z1))"


def separable():
    return CoefficientSpec(1, [[SEP]], 1, 9, hints={"separable"})


def linear_solve(mesh, A, f):
    red = apply_dirichlet(assemble_stiffness(mesh, A), assemble_load(mesh, f),
                          mesh.boundary_vertices)
    return red.expand(cg_solve(red.K, red.b, tol=1e-14))


# -- homogenized field -------------------------------------------------------

def test_field_of_separable_coefficient_is_shared():
    m = build_macro_mesh(UNIT, 16)
    hf = pl.build_homogenized_field(separable(), m, (256, 256))
    assert hf.shared
    assert abs(hf.matrix[0, 0] - REITERATED_1D) < 5e-3


def test_identity_field():
    m = build_macro_mesh(UNIT * 2, (3, 3))
    hf = pl.build_homogenized_field(CoefficientSpec(2, [["1"]], 1, 1), m, (8, 8))
    np.testing.assert_array_equal(hf.tensors, np.broadcast_to(np.eye(2), hf.tensors.shape))


def test_macro_varying_field_is_exact():
    m = build_macro_mesh(UNIT * 2, (3, 2))
    hf = pl.build_homogenized_field(CoefficientSpec(2, [["1 + x1"]], 1, 2), m, (8, 8))
    assert not hf.shared
    expect = (1 + m.centroids[:, 0])[:, None, None] * np.eye(2)
    np.testing.assert_array_equal(hf.tensors, expect)


# -- homogenized obstacle problem -------------------------------------------

def test_inactive_obstacle_is_a_linear_solve():
    m = build_macro_mesh(UNIT, 64)
    sol = pl.solve_homogenized_vi(np.eye(1), 1.0, ObstacleSpec(1, "-1e6"), m)
    np.testing.assert_allclose(sol.u, linear_solve(m, 1.0, 1.0), atol=1e-12)
    assert sol.active.size == 0


def test_contact_against_fine_mesh_and_closed_form():
    ob = ObstacleSpec(1, "-0.5")
    fine = build_macro_mesh(UNIT, 4096)
    ref = pl.solve_homogenized_vi(np.eye(1), -8.0, ob, fine)
    coarse = build_macro_mesh(UNIT, 128)
    sol = pl.solve_homogenized_vi(np.eye(1), -8.0, ob, coarse)
    x = coarse.vertices[:, 0]
    assert np.abs(sol.u - fine.interpolate(ref.u, coarse.vertices)).max() < 1e-4
    assert np.abs(ref.u - obstacle_1d_exact(fine.vertices[:, 0])).max() < 1e-6
    contact = x[sol.active]
    a = np.sqrt(2 * 0.5 / 8)
    assert abs(contact.min() - a) < 2 / 128 and abs(contact.max() - (1 - a)) < 2 / 128


def test_zero_load_gives_zero():
    m = build_macro_mesh(UNIT * 2, (8, 8))
    sol = pl.solve_homogenized_vi(np.eye(2), 0.0, ObstacleSpec(2, "-x1*x2"), m)
    assert np.abs(sol.u).max() == 0.0


# -- epsilon problem ---------------------------------------------------------

def test_constant_coefficient_eps_solution_matches_homogenized():
    c = CoefficientSpec(1, [["3"]], 3, 3)
    ob = ObstacleSpec(1, "-0.05", "sin(2*pi*y1)/10", 2)
    m = build_macro_mesh(UNIT, 256)
    hom = pl.solve_homogenized_vi(3 * np.eye(1), -4.0, ObstacleSpec(1, "-0.05"), m)
    for eps in (0.5, 0.25, 0.125):
        sol = pl.solve_epsilon_vi(c, eps, -4.0, ObstacleSpec(1, "-0.05"), m)
        np.testing.assert_allclose(sol.u, hom.u, atol=1e-12)
    # an oscillating obstacle still changes the solution
    sol = pl.solve_epsilon_vi(c, 0.25, -4.0, ob, m)
    assert np.abs(sol.u - hom.u).max() > 1e-4


def test_direct_and_shifted_formulations_agree():
    m = build_macro_mesh(UNIT, 1024)
    ob = ObstacleSpec(1, "-0.05", "sin(2*pi*y1)/10", 2)
    a = pl.solve_epsilon_vi(separable(), 0.25, -4.0, ob, m, formulation="direct")
    b = pl.solve_epsilon_vi(separable(), 0.25, -4.0, ob, m, formulation="shifted")
    assert a.active.size > 0
    assert np.abs(a.u - b.u).max() <= 1e-9


def test_inactive_eps_obstacle_is_a_linear_solve():
    m = build_macro_mesh(UNIT, 512)
    eps = 0.25
    xc = m.centroids
    ref = linear_solve(m, separable()(xc, xc / eps, xc / eps ** 2), 1.0)
    sol = pl.solve_epsilon_vi(separable(), eps, 1.0, ObstacleSpec(1, "-1e6"), m,
                              formulation="direct")
    np.testing.assert_allclose(sol.u, ref, atol=1e-10)
    # the shifted unknown u - psi carries the size of psi, so keep psi moderate there
    sol = pl.solve_epsilon_vi(separable(), eps, 1.0, ObstacleSpec(1, "-10"), m)
    assert sol.active.size == 0
    np.testing.assert_allclose(sol.u, ref, atol=1e-10)


def test_resolution_guard():
    m = build_macro_mesh(UNIT, 64)
    with pytest.raises(ResolutionError, match="resolve"):
        pl.solve_epsilon_vi(separable(), 0.25, 1.0, ObstacleSpec(1, "-1"), m)
    with pytest.warns(UserWarning):
        pl.solve_epsilon_vi(separable(), 0.25, 1.0, ObstacleSpec(1, "-1"), m, guard="warn")


def test_positive_obstacle_on_boundary_rejected():
    m = build_macro_mesh(UNIT, 512)
    with pytest.raises(ValidationError, match="boundary"):
        pl.solve_epsilon_vi(separable(), 0.25, 1.0, ObstacleSpec(1, "0", "0.5"), m)


def test_fine_subdivisions():
    assert pl.fine_subdivisions(separable(), 0.25, UNIT) == (128,)
    c = CoefficientSpec(2, [["2 + sin(2*pi*y1)"]], 1, 3)
    assert pl.fine_subdivisions(c, 0.125, UNIT * 2, 16) == (128, 128)
    with pytest.raises(ResolutionError):
        pl.fine_subdivisions(separable(), 1 / 64, UNIT, 8, max_subdivisions=1000)


# -- studies -----------------------------------------------------------------

def study(**kw):
    cfg = dict(coeff=separable(), obstacle=ObstacleSpec(1, "-0.05", "sin(2*pi*y1)/10"), f=1.0,
               box=UNIT, eps_list=(1 / 4, 1 / 8, 1 / 16), resolutions=(64, 64))
    cfg.update(kw)
    return pl.StudyConfig(**cfg)


def test_small_study_report():
    rep = pl.convergence_study(study())
    assert rep.strictly_decreasing()
    assert rep.h1_bounded()
    assert rep.equivalence_gap <= 1e-9
    assert rep.u0_feasibility >= -1e-12
    text = rep.to_csv()
    lines = text.split("\n")
    assert lines[0] == "# schema=1"
    assert lines[1] == ",".join(pl.STUDY_COLUMNS)
    assert len(lines) == 3 + 3 and lines[-1] == ""
    assert all(row.split(",")[-1] == "0" for row in lines[2:-1])


def test_study_is_deterministic():
    a = pl.convergence_study(study()).to_csv()
    b = pl.convergence_study(study()).to_csv()
    assert a == b


def test_constant_coefficient_study_sits_at_the_floor():
    rep = pl.convergence_study(study(coeff=CoefficientSpec(1, [["1"]], 1, 1),
                                     obstacle=ObstacleSpec(1, "-0.05"),
                                     macro_subdivisions=(64,)))
    assert np.all(rep.errors <= 1e-10)
    assert rep.strictly_decreasing()


def test_study_rejects_bad_eps_lists():
    with pytest.raises(ValidationError):
        pl.convergence_study(study(eps_list=(0.25,)))
    with pytest.raises(ValidationError):
        pl.convergence_study(study(eps_list=(0.125, 0.25)))


def test_h1_bound_dominates_seminorms():
    rep = pl.convergence_study(study(f="10*sin(pi*x1)", obstacle=ObstacleSpec(1, "0.05 - x1^2 - (1-x1)^2")))
    assert max(r.h1_seminorm for r in rep.rows) <= rep.h1_bound


# -- multiscale convergence check --------------------------------------------

def test_multiscale_limit_of_squared_sine():
    rows = pl.multiscale_check("1", "sin(2*pi*y1)", "sin(2*pi*y1)", [1 / 4, 1 / 16, 1 / 64], UNIT)
    for r in rows:
        assert abs(r.limit - 0.5) < 1e-12
    assert rows[-1].gap <= 1e-2


def test_multiscale_strict_decrease_on_non_aligned_domain():
    rows = pl.multiscale_check("1", "sin(2*pi*y1)", "sin(2*pi*y1)", [1 / 4, 1 / 16, 1 / 64],
                               [(0.0, 0.9)])
    gaps = [r.gap for r in rows]
    assert gaps[0] > gaps[1] > gaps[2]
    # I_eps - limit = -eps sin(4 pi 0.9/eps) / (8 pi) in closed form
    for r in rows:
        exact = -r.eps * np.sin(4 * np.pi * 0.9 / r.eps) / (8 * np.pi)
        assert abs((r.integral - r.limit) - exact) < 1e-8


def test_multiscale_non_oscillating_and_zero_mean():
    rows = pl.multiscale_check("x1", "1", "x1^2", [1 / 4, 1 / 16], UNIT)
    for r in rows:
        assert abs(r.integral - 0.25) < 1e-12 and abs(r.limit - 0.25) < 1e-12
    rows = pl.multiscale_check("1", "sin(2*pi*y1)", "1", [1 / 4, 1 / 16], UNIT)
    assert all(abs(r.limit) < 1e-12 for r in rows)


def test_multiscale_point_budget():
    with pytest.raises(ResolutionError):
        pl.multiscale_check("1", "sin(2*pi*z1)", "1", [1 / 64], UNIT, max_points=1000)

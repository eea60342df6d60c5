import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homogvi.cell import homogenized_tensor, solve_cell, solve_meso, solve_micro
from homogvi.coefficients import CoefficientSpec
from homogvi.errors import BudgetError, ValidationError
from homogvi.meanvalue import AlgebraSpec
from homogvi.mesh import build_cell_mesh
from oracles import LAMINATE_ARITH, REITERATED_1D, SQRT3, arithmetic_mean, harmonic_mean

LAM = "2 + sin(2*pi*z1)"


def a1(t):
    return 2 + np.sin(2 * np.pi * t)


def micro(text, N, n):
    c = CoefficientSpec(N, [[text]], 1, 30)
    cm = build_cell_mesh(n, N)
    return solve_micro(c(np.zeros(N), np.zeros(N), cm.centroids), cm)


def test_constant_coefficient_has_no_corrector():
    A = np.array([[3.0, 0.5], [0.5, 2.0]])
    cm = build_cell_mesh(8, 2)
    chi, t = solve_micro(A, cm)
    assert not np.any(chi.columns)
    np.testing.assert_array_equal(t.matrix, A)


def test_1d_harmonic_mean():
    _, t = micro(LAM, 1, 256)
    assert abs(t.matrix[0, 0] - SQRT3) < 1e-3


def test_2d_laminate():
    _, t = micro(LAM, 2, 128)
    np.testing.assert_allclose(t.matrix, np.diag([SQRT3, LAMINATE_ARITH]), atol=2e-3)


def test_corrector_gradients_have_zero_mean():
    chi, _ = micro("2 + sin(2*pi*z1)*cos(2*pi*z2)", 2, 32)
    np.testing.assert_allclose(chi.gradient_means(), 0, atol=1e-12)


def test_meso_with_constant_atilde():
    A = np.diag([1.5, 2.5])
    theta, t = solve_meso(A, build_cell_mesh(8, 2))
    assert not np.any(theta.columns)
    np.testing.assert_array_equal(t.matrix, A)


def test_meso_laminate():
    cm = build_cell_mesh(128, 2)
    a = a1(cm.centroids[:, 0])
    _, t = solve_meso(a[:, None, None] * np.eye(2), cm)
    np.testing.assert_allclose(t.matrix, np.diag([SQRT3, LAMINATE_ARITH]), atol=2e-3)


def test_reiterated_separable_1d():
    c = CoefficientSpec(1, [["(2 + sin(2*pi*y1))*(2 + sin(2*pi*z1))"]], 1, 9,
                        hints={"separable"})
    t = homogenized_tensor(c, [0.3], (256, 256))
    assert abs(t.matrix[0, 0] - REITERATED_1D) < 5e-3
    # same answer without the separability shortcut
    c2 = CoefficientSpec(1, c.entries, 1, 9)
    t2 = homogenized_tensor(c2, [0.3], (64, 64))
    t3 = homogenized_tensor(c, [0.3], (64, 64))
    assert abs(t2.matrix[0, 0] - t3.matrix[0, 0]) < 1e-10


def test_macro_dependence_passes_through():
    c = CoefficientSpec(2, [["1 + x1"]], 1, 2)
    for x in ([0.0, 0.0], [0.25, 0.9], [1.0, 0.5]):
        t = homogenized_tensor(c, x, (8, 8))
        np.testing.assert_array_equal(t.matrix, (1 + x[0]) * np.eye(2))


def test_single_scale_collapse():
    c = CoefficientSpec(2, [["2 + sin(2*pi*y1)"]], 1, 3)
    t = homogenized_tensor(c, [0.5, 0.5], (16, 128))
    assert t.extra["micro_solves"] == 0
    np.testing.assert_allclose(t.matrix, np.diag([SQRT3, LAMINATE_ARITH]), atol=2e-3)


def test_budget_is_enforced():
    c = CoefficientSpec(2, [["2 + sin(2*pi*y1)*sin(2*pi*z2) + 0.5*cos(2*pi*y2)"]], 1, 4)
    with pytest.raises(BudgetError):
        homogenized_tensor(c, [0.5, 0.5], (8, 8), budget=10)


def test_quasiperiodic_micro_scale_is_flagged_approximate():
    qp = AlgebraSpec("quasiperiodic", frequencies=(2 * np.pi, 2 * np.sqrt(2) * np.pi),
                     supercell=4)
    c = CoefficientSpec(1, [["2 + 0.5*sin(2*pi*z1) + 0.5*sin(2*sqrt(2)*pi*z1)"]], 1, 3,
                        algebra_z=qp)
    t = homogenized_tensor(c, [0.5], (32, 8))
    assert t.approximate and t.refinement_delta is not None
    # in 1D the super-cell answer is the harmonic mean over [0, L]
    g = lambda s: 2 + 0.5 * np.sin(2 * np.pi * s) + 0.5 * np.sin(2 * np.sqrt(2) * np.pi * s)
    assert abs(t.matrix[0, 0] - harmonic_mean(lambda s: g(4 * s))) < 1e-3
    # and it lies between the long-window harmonic and arithmetic means, up to O(1/L)
    lo = harmonic_mean(lambda s: g(4000 * s), 10 ** 6)
    hi = arithmetic_mean(lambda s: g(4000 * s), 10 ** 6)
    assert lo - 0.05 <= t.matrix[0, 0] <= hi


def test_limit_at_infinity_micro_scale():
    c = CoefficientSpec(1, [["2 + 1/(1 + z1^2)"]], 1, 3,
                        algebra_z=AlgebraSpec("converges-at-infinity"))
    t = homogenized_tensor(c, [0.5], (8, 8))
    assert abs(t.matrix[0, 0] - 2.0) < 1e-4


def test_asymmetric_result_is_rejected():
    _, t = micro(LAM, 2, 8)
    t.matrix[0, 1] += 1e-3
    with pytest.raises(ValidationError, match="asymmetric"):
        t.check(1, 3)


@pytest.mark.parametrize("text,sizes", [
    (LAM, (2, 4, 8, 16, 32)),
    # a kink at z = 1/2 limits the midpoint rule to second order
    ("1 + abs(z1 - 0.5) + 1/(2 + sin(2*pi*z1))^2", (8, 16, 32, 64, 128, 256)),
])
def test_cell_resolution_convergence_order(text, sizes):
    vals = [micro(text, 1, n)[1].matrix[0, 0] for n in sizes]
    diffs = np.abs(np.diff(vals))
    diffs = diffs[diffs > 1e-13]
    assert diffs.size >= 3
    assert np.all(diffs[1:] < diffs[:-1])
    assert np.all(np.log2(diffs[:-1] / diffs[1:]) >= 1.8)


COEFFS = [
    ("2 + sin(2*pi*z1)*cos(2*pi*z2)", 1, 3),
    ("(2 + sin(2*pi*y1))*(1.5 + cos(2*pi*z1 + 2*pi*z2))", 0.5, 7.5),
]


@pytest.mark.parametrize("text,alpha,beta", COEFFS)
def test_energy_form_identity_and_bounds(text, alpha, beta):
    c = CoefficientSpec(2, [[text]], alpha, beta, hints={"separable"} if "y1" in text else ())
    t = homogenized_tensor(c, [0.5, 0.5], (24, 24))
    assert t.asymmetry() <= 1e-9
    np.testing.assert_allclose(t.matrix, t.energy_matrix, atol=1e-8 * np.abs(t.matrix).max())
    ev = t.eigenvalues()
    assert alpha - 1e-6 * beta <= ev.min() and ev.max() <= beta + 1e-6 * beta


@pytest.mark.parametrize("scale", [0.5, 3.0])
def test_scaling_covariance(scale):
    c = CoefficientSpec(2, [["2 + sin(2*pi*z1)*cos(2*pi*z2)", "0.3*sin(2*pi*z2)"],
                            ["0.3*sin(2*pi*z2)", "2 + 0.5*cos(2*pi*z1)"]], 0.5, 4)
    t = homogenized_tensor(c, [0.5, 0.5], (24, 8))
    ts = homogenized_tensor(c.scaled(scale), [0.5, 0.5], (24, 8))
    np.testing.assert_allclose(ts.matrix, scale * t.matrix, rtol=0,
                               atol=1e-8 * scale * np.abs(t.matrix).max())


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_voigt_reuss_bracket(seed):
    rng = np.random.default_rng(seed)
    cm = build_cell_mesh(12, 2)
    a = rng.uniform(0.5, 5.0, cm.mesh.n_elements)
    _, t = solve_cell(cm, a)
    w = cm.mesh.volumes / cm.volume
    reuss = 1 / np.sum(w / a)
    voigt = np.sum(w * a)
    ev = t.eigenvalues()
    assert reuss - 1e-6 <= ev.min() and ev.max() <= voigt + 1e-6
    np.testing.assert_allclose(t.matrix, t.energy_matrix, atol=1e-8 * voigt)

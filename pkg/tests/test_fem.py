import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from homogvi.errors import SolverError, ValidationError
from homogvi.fem import (apply_dirichlet, assemble_load, assemble_mass, assemble_stiffness, cg,
                         cg_solve, h1_seminorm, is_symmetric, l2_error, l2_norm,
                         sample_coefficient)
from homogvi.mesh import build_cell_mesh, build_macro_mesh
from oracles import p1_load_1d

UNIT = [(0.0, 1.0)]
SQUARE = [(0.0, 1.0), (0.0, 1.0)]


def test_1d_identity_stiffness_pattern():
    m = build_macro_mesh(UNIT, 2)
    K = assemble_stiffness(m).toarray()
    h = 0.5
    np.testing.assert_allclose(K * h, [[1, -1, 0], [-1, 2, -1], [0, -1, 1]], atol=1e-14)
    np.testing.assert_allclose(K @ np.ones(3), 0, atol=1e-14)


def test_2d_reference_triangle_entries():
    m = build_macro_mesh(SQUARE, (1, 1))
    K = assemble_stiffness(m).toarray()
    # vertices (0,0), (1,0), (0,1), (1,1); the shared diagonal couples 0 and 3
    # with weight zero and each axis-parallel edge contributes -1/2
    expected = np.array([[1.0, -0.5, -0.5, 0.0],
                         [-0.5, 1.0, 0.0, -0.5],
                         [-0.5, 0.0, 1.0, -0.5],
                         [0.0, -0.5, -0.5, 1.0]])
    np.testing.assert_allclose(K, expected, atol=1e-14)


def test_scaled_coefficient_scales_matrix():
    m = build_macro_mesh(SQUARE, (4, 3))
    K1 = assemble_stiffness(m, 1.0)
    K3 = assemble_stiffness(m, 3 * np.eye(2))
    assert abs(K3 - 3 * K1).max() <= 1e-14 * abs(K3).max()


def test_asymmetric_coefficient_rejected():
    m = build_macro_mesh(SQUARE, (2, 2))
    with pytest.raises(ValidationError, match="a_ij = a_ji"):
        sample_coefficient(m, np.array([[1.0, 0.2], [0.0, 1.0]]))


def test_load_constant_and_zero():
    m = build_macro_mesh(UNIT, 8)
    b = assemble_load(m, 1.0)
    vol = np.zeros(9)
    np.add.at(vol, m.elements, m.volumes[:, None] / 2)
    np.testing.assert_allclose(b, vol, atol=1e-15)
    assert abs(b.sum() - 1.0) < 1e-15
    assert not np.any(assemble_load(m, 0.0))


def test_load_linear_matches_quadrature_oracle():
    m = build_macro_mesh(UNIT, 4)
    b = assemble_load(m, lambda p: p[:, 0])
    ref = p1_load_1d(lambda x: x, m.vertices[:, 0])
    np.testing.assert_allclose(b, ref, atol=1e-14)


def test_dirichlet_elimination():
    m = build_macro_mesh(UNIT, 2)
    K = assemble_stiffness(m)
    b = assemble_load(m, 1.0)
    red = apply_dirichlet(K, b, m.boundary_vertices)
    assert red.K.shape == (1, 1)
    same = apply_dirichlet(K, b, np.array([], int))
    assert abs(same.K - K).max() == 0 and np.array_equal(same.b, b)
    with pytest.raises(ValidationError):
        apply_dirichlet(K, b, np.arange(3))


def test_poisson_midpoint_value():
    m = build_macro_mesh(UNIT, 16)
    red = apply_dirichlet(assemble_stiffness(m), assemble_load(m, 1.0), m.boundary_vertices)
    u = red.expand(cg_solve(red.K, red.b, tol=1e-14))
    assert abs(u[8] - 0.125) < 1e-12
    x = m.vertices[:, 0]
    np.testing.assert_allclose(u, x * (1 - x) / 2, atol=1e-12)


def test_cg_trivial_cases():
    I = sp.identity(5, format="csr")
    b = np.arange(5.0)
    np.testing.assert_allclose(cg_solve(I, b), b)
    assert not np.any(cg_solve(I, np.zeros(5)))


def test_cg_failure_carries_residual():
    m = build_macro_mesh(UNIT, 200)
    red = apply_dirichlet(assemble_stiffness(m), assemble_load(m, 1.0), m.boundary_vertices)
    with pytest.raises(SolverError) as info:
        cg(red.K, red.b, tol=1e-14, maxit=3)
    assert info.value.residual > 0 and info.value.iterate is not None


def test_norms():
    m = build_macro_mesh(UNIT, 64)
    x = m.vertices[:, 0]
    assert l2_error(m, x, x) == 0.0
    assert abs(h1_seminorm(m, x) - 1.0) < 1e-13
    assert abs(l2_norm(m, np.sin(np.pi * x)) - np.sqrt(0.5)) < 1e-3


def test_l2_error_against_callable_is_exact_for_p1():
    m = build_macro_mesh(SQUARE, (5, 7))
    u = m.vertices @ np.array([1.0, -2.0])
    assert l2_error(m, u, lambda p: p @ np.array([1.0, -2.0])) < 1e-14


def test_periodic_stiffness_annihilates_constants():
    for N in (1, 2):
        c = build_cell_mesh(8, N)
        rng = np.random.default_rng(N)
        a = 1 + rng.random(c.mesh.n_elements)
        K = assemble_stiffness(c, a)
        assert np.abs(K @ np.ones(c.n_dofs)).max() <= 1e-11 * abs(K).sum(axis=1).max()
        assert is_symmetric(K)


def test_mass_matrix_integrates_products():
    m = build_macro_mesh(SQUARE, (3, 3))
    M = assemble_mass(m)
    one = np.ones(m.n_vertices)
    assert abs(one @ M @ one - 1.0) < 1e-14
    x = m.vertices[:, 0]
    assert abs(x @ M @ one - 0.5) < 1e-14


def _spd_field(rng, ne):
    L = rng.normal(size=(ne, 2, 2))
    return L @ np.transpose(L, (0, 2, 1)) + 0.5 * np.eye(2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(-3, 3), st.floats(-3, 3))
def test_assembly_is_linear(seed, c1, c2):
    rng = np.random.default_rng(seed)
    m = build_macro_mesh(SQUARE, (4, 5))
    A1, A2 = _spd_field(rng, m.n_elements), _spd_field(rng, m.n_elements)
    lhs = assemble_stiffness(m, c1 * A1 + c2 * A2, check=False)
    rhs = c1 * assemble_stiffness(m, A1) + c2 * assemble_stiffness(m, A2)
    assert abs(lhs - rhs).max() <= 1e-12 * max(1.0, abs(rhs).max())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_ellipticity_transfers_to_the_matrix(seed):
    rng = np.random.default_rng(seed)
    alpha, beta = 0.5, 4.0
    m = build_macro_mesh(SQUARE, (6, 6))
    Q = np.linalg.qr(rng.normal(size=(m.n_elements, 2, 2)))[0]
    lam = rng.uniform(alpha, beta, (m.n_elements, 2))
    A = Q @ (lam[:, :, None] * np.transpose(Q, (0, 2, 1)))
    A = 0.5 * (A + np.transpose(A, (0, 2, 1)))
    K = assemble_stiffness(m, A)
    K1 = assemble_stiffness(m)
    w = rng.normal(size=m.n_vertices)
    w[m.boundary_vertices] = 0
    e, s = w @ K @ w, w @ K1 @ w
    assert alpha * s * (1 - 1e-12) <= e <= beta * s * (1 + 1e-12)

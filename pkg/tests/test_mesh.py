import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homogvi.errors import MeshError
from homogvi.mesh import build_cell_mesh, build_macro_mesh


def test_unit_interval_counts():
    m = build_macro_mesh([(0, 1)], 4)
    assert m.n_vertices == 5 and m.n_elements == 4
    assert m.boundary_vertices.tolist() == [0, 4]


def test_unit_square_counts():
    m = build_macro_mesh([(0, 1), (0, 1)], (2, 2))
    assert m.n_vertices == 9 and m.n_elements == 8
    assert m.interior_vertices.tolist() == [4]


@pytest.mark.parametrize("box,subs", [([(1, 1)], 4), ([(0, 1), (2, 2)], (2, 2)),
                                      ([(0, 1)], 0), ([(0, 1)] * 3, 2)])
def test_rejects_bad_input(box, subs):
    with pytest.raises(MeshError):
        build_macro_mesh(box, subs)


def test_cell_mesh_counts():
    c = build_cell_mesh(2, 1)
    assert c.mesh.n_vertices == 3 and c.n_dofs == 2
    c = build_cell_mesh(4, 2)
    assert c.mesh.n_vertices == 25 and c.n_dofs == 16
    with pytest.raises(MeshError):
        build_cell_mesh(1, 1)


def test_periodic_faces_share_dofs():
    c = build_cell_mesh(4, 2)
    V = c.mesh.vertices
    for v in range(V.shape[0]):
        w = c.representative[c.dof_of_vertex[v]]
        assert np.allclose(np.mod(V[v], 1.0), np.mod(V[w], 1.0))


def test_gradients_of_barycentrics():
    m = build_macro_mesh([(0, 2), (0, 1)], (3, 5))
    G = m.gradients
    np.testing.assert_allclose(G.sum(axis=1), 0, atol=1e-12)
    # grad of the interpolated linear function a.x is a on every element
    a = np.array([0.3, -1.7])
    u = m.vertices @ a
    grads = np.einsum("ekn,ek->en", G, u[m.elements])
    np.testing.assert_allclose(grads, np.broadcast_to(a, grads.shape), atol=1e-12)


def test_interpolation_reproduces_linears():
    m = build_macro_mesh([(0, 1), (-1, 1)], (7, 4))
    rng = np.random.default_rng(3)
    pts = np.column_stack([rng.random(200), rng.uniform(-1, 1, 200)])
    u = 2 * m.vertices[:, 0] - 3 * m.vertices[:, 1] + 0.5
    np.testing.assert_allclose(m.interpolate(u, pts), 2 * pts[:, 0] - 3 * pts[:, 1] + 0.5,
                               atol=1e-12)


def test_lumped_weights_sum_to_volume():
    m = build_macro_mesh([(0, 3), (0, 2)], (5, 4))
    assert abs(m.lumped_weights().sum() - 6.0) < 1e-13


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 2), st.floats(-5, 5), st.floats(0.1, 10), st.floats(-5, 5),
       st.floats(0.1, 10), st.integers(1, 40), st.integers(1, 40))
def test_volumes_sum_to_box(N, a, la, b, lb, nx, ny):
    box = [(a, a + la), (b, b + lb)][:N]
    m = build_macro_mesh(box, (nx, ny)[:N])
    vol = la if N == 1 else la * lb
    assert abs(m.volumes.sum() - vol) <= 1e-13 * vol
    assert np.all(m.volumes > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(1, 2))
def test_dof_map_is_a_projection(n, N):
    c = build_cell_mesh(n, N)
    proj = c.representative[c.dof_of_vertex]
    np.testing.assert_array_equal(proj[proj], proj)
    np.testing.assert_array_equal(c.dof_of_vertex[c.representative], np.arange(c.n_dofs))

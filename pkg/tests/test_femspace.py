from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdgal.femspace import build_layout, eval_basis, eval_face_basis, pdim, quadrature
from hdgal.mesh import generate_bfs, generate_unit_square


def test_layout_table_counts():
    L = build_layout(generate_unit_square(32), 2)
    assert (L.n_u, L.n_p, L.n_ubar, L.n_pbar) == (24576, 6144, 18816, 9408)
    assert L.total_dofs == 58944
    assert L.condensed_dofs == 28224


def test_layout_smallest():
    L = build_layout(generate_unit_square(1), 1)
    assert (L.n_u, L.n_p, L.n_ubar, L.n_pbar, L.total_dofs) == (12, 2, 20, 10, 44)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["sq", "bfs"]), st.integers(1, 6), st.integers(1, 4))
def test_layout_formulas(kind, n, k):
    m = generate_unit_square(n) if kind == "sq" else generate_bfs(min(n, 2))
    L = build_layout(m, k)
    nc, nf = m.ncells, m.nfaces
    assert L.n_u == 2 * nc * (k + 1) * (k + 2) // 2
    assert L.n_p == nc * k * (k + 1) // 2
    assert L.n_ubar == 2 * nf * (k + 1)
    assert L.n_pbar == nf * (k + 1)
    assert L.total_dofs == L.n_u + L.n_p + L.n_ubar + L.n_pbar
    assert L.condensed_dofs == L.n_ubar + L.n_pbar
    nd = len(m.faces_tagged("wall", "lid", "inflow"))
    assert len(L.dirichlet) == nd * 2 * (k + 1)


def test_layout_rejects_degree():
    m = generate_unit_square(1)
    with pytest.raises(ValueError):
        build_layout(m, 0)
    with pytest.raises(ValueError):
        build_layout(m, 5)


def test_triangle_rule_centroid():
    r = quadrature("triangle", 1)
    assert len(r) == 1
    assert np.allclose(r.points, [[1 / 3, 1 / 3]])
    assert r.weights[0] == 0.5


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_edge_rule_gauss(k):
    r = quadrature("edge", 2 * k + 1)
    assert len(r) == k + 1
    assert abs(r.weights.sum() - 1.0) <= 1e-14


def test_x2y_integral():
    r = quadrature("triangle", 3)
    x, y = r.points.T
    assert abs(np.sum(r.weights * x**2 * y) - 1.0 / 60.0) <= 1e-14


@pytest.mark.parametrize("deg", [0, 2, 5, 8, 14, 20])
def test_triangle_exactness(deg):
    r = quadrature("triangle", deg)
    assert abs(r.weights.sum() - 0.5) <= 1e-14
    x, y = r.points.T
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert abs(np.sum(r.weights * x**a * y**b) - exact) <= 1e-12


@pytest.mark.parametrize("deg", [1, 4, 9, 14])
def test_edge_exactness(deg):
    r = quadrature("edge", deg)
    for a in range(deg + 1):
        assert abs(np.sum(r.weights * r.points**a) - 1.0 / (a + 1)) <= 1e-12


def test_quadrature_errors():
    with pytest.raises(ValueError):
        quadrature("triangle", 1000)
    with pytest.raises(ValueError):
        quadrature("square", 2)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_basis_orthonormal(k):
    r = quadrature("triangle", 2 * k)
    phi, _ = eval_basis(k, r.points)
    assert phi.shape == (pdim(k), len(r))
    M = (phi * r.weights) @ phi.T
    assert np.abs(M - np.eye(pdim(k))).max() <= 1e-12
    assert np.isfinite(np.linalg.cond(M))
    e = quadrature("edge", 2 * k)
    psi = eval_face_basis(k, e.points)
    assert psi.shape == (k + 1, len(e))
    assert np.abs((psi * e.weights) @ psi.T - np.eye(k + 1)).max() <= 1e-12


@pytest.mark.parametrize("k", [1, 2, 3])
def test_basis_spans_pk(k):
    # every monomial of degree <= k is reproduced by its projection
    r = quadrature("triangle", 2 * k + 2)
    phi, _ = eval_basis(k, r.points)
    x, y = r.points.T
    for a in range(k + 1):
        for b in range(k + 1 - a):
            f = x**a * y**b
            c = phi @ (r.weights * f)
            assert np.abs(c @ phi - f).max() <= 1e-12
    c = phi @ (r.weights * np.ones_like(x))
    assert np.abs(c @ phi - 1.0).max() <= 1e-13


@pytest.mark.parametrize("k", [1, 2, 3])
def test_basis_gradient_fd(k):
    rng = np.random.default_rng(k)
    u = rng.uniform(0, 1, (10, 2))
    pts = np.stack([u[:, 0] * (1 - u[:, 1]), u[:, 1]], 1) * 0.9 + 0.03
    _, g = eval_basis(k, pts)
    h = 1e-5
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fd = (eval_basis(k, pts + e)[0] - eval_basis(k, pts - e)[0]) / (2 * h)
        assert np.abs(fd - g[:, :, d]).max() <= 1e-6

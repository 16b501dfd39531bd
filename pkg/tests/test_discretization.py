from math import comb, gamma, pi

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from singular_toda.discretization import (MIN_CORE_RADIUS, BaseProfile, GridConfig, GridError,
                                          build_grid, cutoff, eval_weight_field, gregory_weights,
                                          log_kernel_matrix, log_weight, self_cell_term,
                                          sphere_rule)
from singular_toda.problem_model import SourceSet, sphere_measure


def test_base_profile_is_minus_log_outside():
    r = np.geomspace(1.0, 1e6, 50)
    assert np.allclose(BaseProfile.radial(r), -np.log(r), rtol=0, atol=1e-15)


def test_base_profile_smooth_seam():
    # one-sided difference quotients of orders 1..3 agree across r = 1
    h = 1e-3
    f = BaseProfile.radial
    for k in range(1, 4):
        coef = np.array([(-1) ** (k - j) * comb(k, j) for j in range(k + 1)])
        left = np.dot(coef, f(1.0 - h * np.arange(k, -1, -1))) / h ** k
        right = np.dot(coef, f(1.0 + h * np.arange(k + 1))) / h ** k
        assert left == pytest.approx(right, rel=0, abs=10 * k * h * 2 ** k)


def test_base_profile_monotone_and_bounded():
    r = np.linspace(0.0, 1.0, 2001)
    u = BaseProfile.radial(r)
    assert np.all(np.diff(u) < 0)
    assert np.isfinite(u[0])


@given(st.integers(13, 80), st.integers(0, 11))
def test_gregory_exact_for_low_degree(n, d):
    w = np.array(gregory_weights(n))
    x = np.arange(n + 1) / n
    assert np.dot(w, x ** d) / n == pytest.approx(1.0 / (d + 1), rel=1e-10)


@pytest.mark.parametrize("n", [2, 3])
def test_sphere_rule_moments(n):
    x, w = sphere_rule(n, 16)
    area = sphere_measure(n - 1)
    assert w.sum() == pytest.approx(area, rel=1e-13)
    assert np.allclose(np.linalg.norm(x, axis=1), 1.0)
    for k in range(n):
        assert np.dot(w, x[:, k] ** 2) == pytest.approx(area / n, rel=1e-12)
        assert abs(np.dot(w, x[:, k])) < 1e-13


def test_cutoff_is_a_smooth_step():
    t = np.linspace(-0.5, 1.5, 401)
    c = cutoff(t)
    assert np.all(c[t <= 0.3] == 1) and np.all(c[t >= 1] == 0)
    assert np.all(np.diff(c) <= 0)


@pytest.mark.parametrize("n", [2, 3])
def test_self_cell_term_is_ball_average(n):
    rho = 0.37
    vol = pi ** (n / 2) / gamma(n / 2 + 1) * rho ** n
    exact = quad(lambda r: -np.log(r) * n * r ** (n - 1) / rho ** n, 0, rho)[0]
    assert self_cell_term(vol, n) == pytest.approx(exact, rel=1e-12)


def _gauss_integral(beta, level):
    s = SourceSet([[0.0, 0.0]], [[beta]]) if beta else SourceSet(np.zeros((0, 2)),
                                                                   np.zeros((1, 0)))
    g = build_grid(s, GridConfig(refine=level))
    f = np.exp(-np.einsum("ij,ij->i", g.nodes, g.nodes) + log_weight(s, 0, g.nodes, 2.0))
    return g.integrate(f) / (pi * gamma(1 - beta)) - 1.0


@pytest.mark.parametrize("beta", [0.0, 0.5, 0.9])
def test_singular_gaussian_quadrature_converges(beta):
    e0, e1 = abs(_gauss_integral(beta, 0)), abs(_gauss_integral(beta, 1))
    assert e0 < 1e-3
    assert e1 < 1e-4
    assert e1 < e0


def test_gaussian_3d():
    g = build_grid(SourceSet(np.zeros((0, 3)), np.zeros((1, 0)), 3))
    assert g.integrate(np.exp(-np.einsum("ij,ij->i", g.nodes, g.nodes))) == \
        pytest.approx(pi ** 1.5, rel=1e-4)


def test_grid_is_deterministic_and_valid():
    s = SourceSet([[0.3, 0.1], [-1.0, 0.5]], [[0.4, 0.2], [0.1, 0.6]])
    a, b = build_grid(s), build_grid(s)
    assert a.nodes.tobytes() == b.nodes.tobytes()
    assert a.weights.tobytes() == b.weights.tobytes()
    assert np.all(a.weights > 0)
    assert len(np.unique(a.nodes, axis=0)) == a.size
    assert a.inner_index.max() < a.size


def test_core_stays_above_float_floor():
    s = SourceSet([[1.0, 0.0]], [[0.9]])
    g = build_grid(s)
    d = np.linalg.norm(g.nodes - s.points[0], axis=1)
    assert d.min() >= 0.5 * MIN_CORE_RADIUS


def test_refinement_grows_grid():
    s = SourceSet([[0.5, 0.0]], [[0.3]])
    assert build_grid(s, GridConfig(refine=1)).size > 3 * build_grid(s).size


def test_split_radius_must_enclose_sources():
    with pytest.raises(GridError):
        build_grid(SourceSet([[2.0, 0.0]], [[0.3]]), GridConfig(split_radius=1.0))


def test_weight_field_cap():
    s = SourceSet([[0.0, 0.0]], [[0.5]])
    g = build_grid(s)
    with pytest.raises(GridError, match="exceeds cap"):
        eval_weight_field(s, 0, BaseProfile(), g, log_cap=0.0)


def test_kernel_matrix_near_and_far_forms():
    s = SourceSet([[0.2, 0.0]], [[0.3]])
    g = build_grid(s)
    y = g.nodes[:50]
    tgt = np.array([[0.1, 0.2], [3.0, -4.0]])
    G = log_kernel_matrix(g, tgt)
    assert np.allclose(G[0, :50], -np.log(np.linalg.norm(tgt[0] - y, axis=1)))
    assert np.allclose(G[1, :50], np.log(5.0) - np.log(np.linalg.norm(tgt[1] - y, axis=1)))
    with pytest.raises(GridError):
        log_kernel_matrix(g, g.nodes[:1])


def test_kernel_matrix_diagonal_and_reproducible():
    g = build_grid(SourceSet(np.zeros((0, 2)), np.zeros((1, 0))))
    G1, G2 = log_kernel_matrix(g), log_kernel_matrix(g, chunk=97)
    assert G1.tobytes() == G2.tobytes()
    assert np.all(np.isfinite(np.diag(G1)))

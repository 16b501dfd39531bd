import numpy as np
import pytest

from singular_toda.discretization import GridConfig, build_grid
from singular_toda.liouville_n import (DimensionalConstants, LiouvilleOperator, apply_T_n,
                                       dilation_invariant, is_coarse_only,
                                       normalization_constant_n, scaling_gauge, single_source,
                                       solve_n)
from singular_toda.oracle import singular_bubble
from singular_toda.problem_model import SourceSet, derived_exponents, gamma_n
from singular_toda.toda_operator import Status


def test_dimensional_constants():
    c = DimensionalConstants.of(3)
    assert c.lambda_1 == pytest.approx(4 * np.pi ** 2)
    assert c.gamma_n == gamma_n(3)
    assert is_coarse_only(4) and not is_coarse_only(3)


def test_single_source_layout():
    s = single_source(0.5)
    assert s.validation and s.far_exponent == 3.0
    assert derived_exponents(s).target_mass[0] == pytest.approx(6 * np.pi)
    assert single_source(0.0, 3).m == 0
    with pytest.raises(ValueError):
        single_source(-1.0)


def test_dilation_invariance_detection():
    assert dilation_invariant(single_source(0.0), np.zeros(2))
    assert dilation_invariant(single_source(0.3), np.zeros(2))
    assert not dilation_invariant(single_source(0.3, point=[1.0, 0.0]), np.zeros(2))
    assert not dilation_invariant(SourceSet([[0, 0]], [[0.3]]), np.zeros(2))


@pytest.mark.parametrize("alpha, n", [(0.0, 2), (0.5, 2), (-0.5, 2), (0.0, 3)])
def test_scaling_gauge_vanishes_on_unit_member(alpha, n):
    s = single_source(alpha, n)
    g = build_grid(s, GridConfig.for_dimension(n))
    gauge = scaling_gauge(s, g)
    r = g.radius
    logm = np.log(g.weights) + n * alpha * np.log(np.where(r > 0, r, 1.0)) \
        + n * singular_bubble(r, alpha, n)
    assert np.abs(gauge.means(logm)).max() < 2e-3


def test_operator_rejects_toda():
    s = SourceSet([[0, 0]], [[0.1], [0.2]])
    with pytest.raises(ValueError):
        LiouvilleOperator(s, build_grid(s))


def test_gauge_can_be_disabled():
    s = single_source(0.0)
    g = build_grid(s)
    assert LiouvilleOperator(s, g).gauge is not None
    assert LiouvilleOperator(s, g, gauge=False).gauge is None


@pytest.mark.parametrize("alpha", [-0.9, -0.5, 0.5, 0.9])
def test_singular_bubble_recovered(alpha):
    s = single_source(alpha)
    res = solve_n(s)
    assert res.status is Status.CONVERGED
    r = res.grid.radius
    sel = (r > 1e-2) & (r < 10)
    err = np.abs(res.u[0, sel] - singular_bubble(r[sel], alpha)).max()
    assert err < 1e-2
    assert abs(res.operator.last_mu[0]) < 1e-2
    assert np.abs(apply_T_n(res.v, res.operator) - res.v[0]).max() < 1e-7


def test_three_dimensional_bubble():
    res = solve_n(single_source(0.0, 3))
    assert res.converged
    r = res.grid.radius
    sel = r < 10
    assert np.abs(res.u[0, sel] - singular_bubble(r[sel], 0.0, 3)).max() < 1e-2


def test_normalization_constant_n():
    g = build_grid(single_source(0.0, 3))
    v = np.zeros(g.size)
    c = normalization_constant_n(v, -6 * np.log1p(g.radius ** 2), np.log(g.weights), 2.0, 3)
    total = g.integrate(np.exp(-6 * np.log1p(g.radius ** 2) + 3 * c))
    assert total == pytest.approx(2.0 * gamma_n(3), rel=1e-12)


def test_scalar_four_point_problem_converges():
    s = SourceSet([[1, 0], [-0.5, 0.8], [-0.5, -0.8], [3, 0]], [[0.3, 0.2, 0.2, 0.4]])
    res = solve_n(s)
    assert res.converged
    assert res.operator.gauge is None

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from singular_toda.oracle import (align_scale, angular_log_average, bubble_2d, bubble_fd_residual,
                                  cross_validate, radial_solve, singular_bubble,
                                  validation_suite)
from singular_toda.problem_model import gamma_n

radii = st.floats(1e-3, 1e3)


def test_bubble_2d_solves_liouville():
    pts = np.random.default_rng(1).uniform(-3, 3, (100, 2))
    assert bubble_fd_residual(pts) < 1e-5
    assert bubble_2d([0.0, 0.0])[0] == pytest.approx(np.log(2.0))


def test_singular_bubble_mass():
    for alpha in (-0.5, 0.0, 0.7):
        m = quad(lambda r: r ** (2 * alpha) * np.exp(2 * singular_bubble(r, alpha)) * 2 * np.pi
                 * r, 0, np.inf, limit=200)[0]
        assert m == pytest.approx(4 * np.pi * (1 + alpha), rel=1e-8)
    with pytest.raises(ValueError):
        singular_bubble(1.0, 0.5, 3)


@given(radii, radii)
def test_angular_average_2d(r, s):
    ref = quad(lambda t: -np.log(np.hypot(r - s * np.cos(t), s * np.sin(t))), 0, np.pi,
               limit=200, points=[0.0])[0] / np.pi
    assert angular_log_average(r, s, 2) == pytest.approx(ref, abs=1e-8)


@given(radii, radii)
def test_angular_average_3d(r, s):
    # mean over the sphere of radius r: (1/2) int_0^pi -log|x - y| sin(t) dt
    ref = quad(lambda t: -0.5 * np.log(r * r + s * s - 2 * r * s * np.cos(t)) * np.sin(t) / 2,
               0, np.pi, limit=200)[0]
    assert angular_log_average(r, s, 3) == pytest.approx(ref, abs=1e-8)
    assert angular_log_average(r, s, 3) == angular_log_average(s, r, 3)


def test_angular_average_rejects_other_dimensions():
    with pytest.raises(ValueError):
        angular_log_average(1.0, 2.0, 4)


@pytest.mark.parametrize("alpha, n", [(0.0, 2), (0.5, 2), (-0.5, 2), (0.0, 3)])
def test_radial_solve_matches_closed_form(alpha, n):
    sol = radial_solve(alpha, n)
    assert sol.converged
    assert sol.mass == pytest.approx(2 * gamma_n(n) * (1 + alpha), rel=1e-12)
    sel = (sol.r > 1e-3) & (sol.r < 1e3)
    assert np.abs(sol.u[sel] - singular_bubble(sol.r[sel], alpha, n)).max() < 1e-4
    assert abs(sol.gauge_multiplier) < 1e-10


def test_radial_solve_is_cached_and_validated():
    assert radial_solve(0.0) is radial_solve(0.0, 2)
    with pytest.raises(ValueError):
        radial_solve(-1.0)
    with pytest.raises(ValueError):
        radial_solve(0.0, 4)


def test_radial_solution_csv():
    text = radial_solve(0.0).to_csv()
    lines = text.splitlines()
    assert lines[0] == "r,u" and len(lines) == 3001


@pytest.mark.parametrize("lam", [0.3, 1.0, 2.5])
def test_scale_alignment_recovers_member(lam):
    sol = radial_solve(0.5)
    x = np.random.default_rng(3).uniform(-5, 5, (400, 2))
    r = np.linalg.norm(x, axis=1)
    u = sol.scaled(lam)(r)
    assert align_scale(sol, r, u) == pytest.approx(lam, rel=1e-8)
    cv = cross_validate(sol, x, np.zeros(2), u)
    assert cv["relative_error"] < 1e-8 and cv["nodes"] == 400


def test_validation_suite_passes():
    rows = validation_suite()
    failed = [r for r in rows if not r["passed"]]
    assert not failed, failed

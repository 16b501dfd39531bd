"""Scalar singular Liouville equation in R^n in its integral (normal) form."""
from __future__ import annotations

from dataclasses import dataclass
from math import gamma

import numpy as np

from .discretization import GridConfig, QuadratureGrid, build_grid
from .problem_model import SourceSet, gamma_n, sphere_measure
from .toda_operator import (GaugeConstraint, IterationConfig, KernelOperator, SolveResult, normalization_constant,
                            solve_fixed_point)

COARSE_ONLY_DIMENSION = 4


@dataclass(frozen=True)
class DimensionalConstants:
    n: int
    sphere_measure: float
    gamma_n: float
    lambda_1: float

    @classmethod
    def of(cls, n: int) -> "DimensionalConstants":
        g = gamma_n(n)
        return cls(n, sphere_measure(n), g, 2.0 * g)


def normalization_constant_n(v, log_kbar, log_w, beta: float, n: int) -> float:
    """c with sum_j w_j Kbar_j exp(n (v_j + c)) = beta gamma_n."""
    return normalization_constant(v, log_kbar, log_w, beta * gamma_n(n), float(n))


def dilation_invariant(s: SourceSet, center) -> bool:
    """No sources, or one validation source sitting at ``center``."""
    if s.m == 0:
        return True
    return bool(s.validation and s.m == 1 and np.allclose(s.points[0], center))


def scaling_gauge(s: SourceSet, grid: QuadratureGrid) -> GaugeConstraint:
    """Selects the member of the bubble family with unit scale centred at the
    grid centre.  With ``rho = r^(2(1+alpha))`` the mean of
    ``(1 - rho)/(1 + rho)`` vanishes exactly on that member; without sources
    the mass centre is pinned as well."""
    alpha = -float(s.weights[0, 0]) if s.m else 0.0
    x = grid.nodes - grid.center
    r2 = np.einsum("ij,ij->i", x, x)
    rho = r2 ** (1.0 + alpha)
    f = [(1.0 - rho) / (1.0 + rho)]
    psi = [1.0 / (1.0 + rho)]
    if s.m == 0:
        for k in range(grid.dimension):
            f.append(x[:, k] / (1.0 + r2))
            psi.append(x[:, k] / (1.0 + r2))
    return GaugeConstraint(np.array(f), np.array(psi))


class LiouvilleOperator(KernelOperator):
    """Scalar operator; dilation-invariant problems get :func:`scaling_gauge`
    unless ``gauge=False`` is passed."""

    def __init__(self, s: SourceSet, grid: QuadratureGrid, gauge=None, **kw):
        if s.is_toda:
            raise ValueError("LiouvilleOperator needs a one-component source set")
        n = s.dimension
        if gauge is None and dilation_invariant(s, grid.center):
            gauge = scaling_gauge(s, grid)
        super().__init__(s, grid, np.ones((1, 1)), gamma_n(n), float(n),
                         gauge=gauge or None, **kw)

    def initial_guess(self) -> np.ndarray:
        """Zero, or for a pinned family the unit-scale profile
        ``-log(1 + r^beta) - beta u0`` (bounded, vanishing at infinity)."""
        if self.gauge is None:
            return super().initial_guess()
        b = float(self.exponents.beta[0])
        r = self.grid.radius
        return (-np.log1p(r ** b) - b * self.u0)[None, :]


def apply_T_n(v, op: LiouvilleOperator) -> np.ndarray:
    return op.homotopy_map(v)[0]


def single_source(alpha: float, n: int = 2, point=None) -> SourceSet:
    """Weight ``|x - P|^{n alpha}`` with the mass ``2 gamma_n (1 + alpha)`` of a
    normal solution; ``alpha = 0`` gives the source-free problem."""
    if alpha <= -1.0:
        raise ValueError("alpha must exceed -1")
    p = np.zeros((1, n)) if point is None else np.asarray(point, float).reshape(1, n)
    if alpha == 0.0:
        return SourceSet(np.zeros((0, n)), np.zeros((1, 0)), n)
    return SourceSet(p, np.array([[-alpha]]), n, far_exponent=2.0 * (1.0 + alpha),
                     validation=True)


def is_coarse_only(n: int) -> bool:
    return n >= COARSE_ONLY_DIMENSION


def solve_n(s: SourceSet, cfg: IterationConfig | None = None, grid: QuadratureGrid | None = None,
            grid_config: GridConfig | None = None) -> SolveResult:
    grid = grid or build_grid(s, grid_config or GridConfig.for_dimension(s.dimension))
    return solve_fixed_point(LiouvilleOperator(s, grid), cfg)

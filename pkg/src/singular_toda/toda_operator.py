"""Fixed-point operator for the singular SU(3) Toda system and its solver.

The unknowns are bounded remainders ``v_i`` on a quadrature grid.  One
application of the operator normalizes each component's mass, convolves the
Cartan-coupled densities with the logarithmic kernel and subtracts
``beta_i u0``.  :func:`solve_fixed_point` drives any such operator through a
damped homotopy ``v <- (1 - theta) v + theta t T(v)``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from math import log, pi
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .discretization import (GridConfig, QuadratureGrid, WeightField, build_grid, build_u0,
                             eval_weight_field, log_kernel_matrix)
from .problem_model import CARTAN, DerivedExponents, SourceSet, derived_exponents

logger = logging.getLogger(__name__)


class DegenerateFieldError(ArithmeticError):
    """The weighted integral used for normalization is not finite and positive."""


def normalization_constant(v, log_kbar, log_w, target: float, power: float = 2.0) -> float:
    """Constant ``c`` with ``sum_j w_j Kbar_j exp(power (v_j + c)) = target``.

    ``log_kbar`` may be a :class:`WeightField` or an array of logs.
    """
    if isinstance(log_kbar, WeightField):
        log_kbar = log_kbar.log_values
    if not (np.isfinite(target) and target > 0):
        raise DegenerateFieldError(f"normalization target {target!r} is not positive")
    with np.errstate(over="ignore", invalid="ignore"):
        L = logsumexp(log_kbar + log_w + power * np.asarray(v))
    if not np.isfinite(L):
        raise DegenerateFieldError("weighted integral of exp(power v) is not finite and positive")
    return (log(target) - L) / power


class GaugeConstraint:
    """Pins a neutral family of solutions.

    The operator output ``w`` is corrected to ``w + sum_k mu_k psi_k`` with
    ``mu`` chosen so that the mass-weighted means of the test functions
    ``f_k`` vanish.  Only used for dilation/translation invariant problems.
    """

    def __init__(self, f, psi, newton_steps: int = 12, max_step: float = 0.5):
        self.f = np.atleast_2d(np.asarray(f, dtype=float))
        self.psi = np.atleast_2d(np.asarray(psi, dtype=float))
        if self.f.shape != self.psi.shape:
            raise ValueError("gauge test functions and directions must have equal shape")
        self.newton_steps = newton_steps
        self.max_step = max_step

    def means(self, log_mass) -> np.ndarray:
        p = np.exp(log_mass - logsumexp(log_mass))
        return self.f @ p

    def correct(self, w, log_base, power: float):
        """Return ``(w + psi.T mu, mu)`` with vanishing constraint means.

        Newton on ``mu`` with steps capped in sup norm, so a far-off iterate
        is pulled towards the gauge gradually instead of overshooting.
        """
        mu = np.zeros(self.f.shape[0])
        for _ in range(self.newton_steps):
            lm = log_base + power * (w + mu @ self.psi)
            p = np.exp(lm - logsumexp(lm))
            g = self.f @ p
            if np.abs(g).max() < 1e-15:
                break
            fc = self.f - g[:, None]
            jac = power * (fc * p) @ (self.psi - (self.psi @ p)[:, None]).T
            try:
                d = np.linalg.solve(jac, g)
            except np.linalg.LinAlgError:
                break
            big = np.abs(d).max()
            if not np.isfinite(big):
                break
            if big > self.max_step:
                d *= self.max_step / big
            mu = mu - d
        return w + mu @ self.psi, mu


class KernelOperator:
    """Coupled log-kernel operator ``v_i -> (1/kappa) sum_j A_ij G m_j - beta_i u0``.

    ``m_j`` are the normalized nodal masses ``w Kbar_j exp(power (v_j + c_j))``.
    Targets with ``|x| > 1`` use the far form of the kernel, where the
    ``-beta_i u0`` term is absorbed analytically.
    """

    def __init__(self, s: SourceSet, grid: QuadratureGrid, coupling, kappa: float, power: float,
                 kernel: Optional[np.ndarray] = None, profile=None,
                 gauge: Optional[GaugeConstraint] = None):
        self.source_set = s
        self.gauge = gauge
        self.last_mu = None
        self.grid = grid
        self.coupling = np.asarray(coupling, dtype=float)
        self.kappa = float(kappa)
        self.power = float(power)
        self.exponents: DerivedExponents = derived_exponents(s)
        self.profile = profile or build_u0(grid.center, grid.dimension)
        self.fields = [eval_weight_field(s, i, self.profile, grid) for i in range(s.components)]
        self.log_w = np.log(grid.weights)
        self.u0 = self.profile(grid.nodes)
        self.near = np.linalg.norm(grid.nodes - grid.center, axis=1) <= 1.0
        self.G = log_kernel_matrix(grid) if kernel is None else kernel

    def initial_guess(self) -> np.ndarray:
        return np.zeros((self.components, self.grid.size))

    @property
    def components(self) -> int:
        return len(self.fields)

    @property
    def targets(self) -> np.ndarray:
        return self.exponents.target_mass

    def constants(self, v) -> np.ndarray:
        v = np.atleast_2d(v)
        return np.array([normalization_constant(v[i], self.fields[i], self.log_w,
                                                self.targets[i], self.power)
                         for i in range(self.components)])

    def masses(self, v, c=None) -> np.ndarray:
        """Nodal masses ``m_j``, shape (components, N)."""
        v = np.atleast_2d(v)
        c = self.constants(v) if c is None else c
        return np.exp(np.stack([f.log_values for f in self.fields]) + self.log_w
                      + self.power * (v + c[:, None]))

    def potential(self, m) -> np.ndarray:
        """(1/kappa) sum_j A_ij G m_j without the base-profile term."""
        return (self.coupling @ (self.G @ np.atleast_2d(m).T).T) / self.kappa

    def apply(self, v, c=None) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, dtype=float))
        out = self.potential(self.masses(v, c))
        beta = self.exponents.beta
        out[:, self.near] -= beta[:, None] * self.u0[self.near]
        return out

    def homotopy_map(self, v, c=None, t: float = 1.0) -> np.ndarray:
        """``t T(v)``, followed by the gauge correction when one is set.

        The family being pinned only exists at ``t = 1``; intermediate
        homotopy stages are solved without the gauge.
        """
        out = t * self.apply(v, c)
        if self.gauge is not None and t == 1.0:
            base = self.fields[0].log_values + self.log_w
            out[0], self.last_mu = self.gauge.correct(out[0], base, self.power)
        return out

    def assemble(self, v, c) -> np.ndarray:
        """u_i = v_i + beta_i u0 + c_i."""
        return np.atleast_2d(v) + self.exponents.beta[:, None] * self.u0 + np.asarray(c)[:, None]


class TodaOperator(KernelOperator):
    def __init__(self, s: SourceSet, grid: QuadratureGrid, **kw):
        if not s.is_toda:
            raise ValueError("TodaOperator needs a two-component source set")
        super().__init__(s, grid, CARTAN, 2.0 * pi, 2.0, **kw)


def apply_T(v, op: KernelOperator) -> np.ndarray:
    return op.homotopy_map(v)


# ------------------------------------------------------------------ iteration

class Status(str, enum.Enum):
    CONVERGED = "Converged"
    BLOWUP = "BlowUp"
    MAXITER = "MaxIter"


@dataclass(frozen=True)
class IterationConfig:
    damping: float = 0.5
    min_damping: float = 0.05
    tolerance: float = 1e-8
    max_iter: int = 3000
    schedule: Sequence[float] = (0.25, 0.5, 0.75, 1.0)
    blowup_threshold: float = 12.0

    def __post_init__(self):
        sched = tuple(float(t) for t in self.schedule)
        if not sched or sched[-1] != 1.0 or any(b <= a for a, b in zip(sched, sched[1:])) \
                or sched[0] <= 0.0:
            raise ValueError(f"homotopy schedule must increase strictly in (0, 1] to 1: {sched}")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        object.__setattr__(self, "schedule", sched)

    def as_dict(self):
        return {"damping": self.damping, "min_damping": self.min_damping,
                "tolerance": self.tolerance, "max_iter": self.max_iter,
                "schedule": list(self.schedule), "blowup_threshold": self.blowup_threshold}


@dataclass
class SolveResult:
    status: Status
    v: np.ndarray
    constants: np.ndarray
    u: np.ndarray
    history: list = field(default_factory=list)
    exponents: Optional[DerivedExponents] = None
    blowup_node: Optional[int] = None
    blowup_point: Optional[np.ndarray] = None
    operator: Optional[KernelOperator] = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    @property
    def grid(self) -> QuadratureGrid:
        return self.operator.grid

    def summary(self) -> dict:
        last = self.history[-1] if self.history else {}
        return {
            "status": self.status.value,
            "iterations": len(self.history),
            "final_residual": last.get("residual"),
            "constants": self.constants.tolist(),
            "exponents": self.exponents.as_dict() if self.exponents else None,
            "blowup_point": None if self.blowup_point is None else self.blowup_point.tolist(),
            "nodes": int(self.v.shape[1]),
        }


def solve_fixed_point(op: KernelOperator, cfg: IterationConfig | None = None,
                      v0=None) -> SolveResult:
    """Damped homotopy iteration on ``v = t T(v)``.

    Each history row records the stage ``t``, the damping in force, the
    step ``sup|v_new - v_old|`` and the fixed-point residual
    ``sup|t T(v) - v|``; a stage ends when the latter is below tolerance.
    Gauge-pinned operators are solved at ``t = 1`` directly: the pinned
    family only exists there, and entering it from an intermediate stage
    lands on spurious branches with a large gauge multiplier.
    """
    cfg = cfg or IterationConfig()
    C, N = op.components, op.grid.size
    v = op.initial_guess() if v0 is None else np.array(v0, dtype=float).reshape(C, N)
    theta = cfg.damping
    history = []
    status = Status.CONVERGED
    blow = None
    it = 0
    schedule = (1.0,) if op.gauge is not None else cfg.schedule
    for t in schedule:
        prev = np.inf
        stage_done = False
        while it < cfg.max_iter:
            c = op.constants(v)
            psi = v + c[:, None] + log(t) / op.power
            k = int(np.argmax(psi.max(axis=0)))
            sup_psi = float(psi.max())
            if sup_psi > cfg.blowup_threshold:
                status, blow = Status.BLOWUP, k
                history.append(dict(iteration=it, t=t, theta=theta, step=np.nan,
                                    residual=np.nan, sup_psi=sup_psi))
                break
            Tv = op.homotopy_map(v, c, t)
            res = float(np.abs(Tv - v).max())
            if res > prev and theta > cfg.min_damping:
                theta = max(0.5 * theta, cfg.min_damping)
            prev = res
            v_new = (1.0 - theta) * v + theta * Tv
            step = float(np.abs(v_new - v).max())
            history.append(dict(iteration=it, t=t, theta=theta, step=step, residual=res,
                                sup_psi=sup_psi))
            it += 1
            v = v_new
            if res <= cfg.tolerance:
                stage_done = True
                break
        if status is Status.BLOWUP:
            break
        if not stage_done:
            status = Status.MAXITER
            break
        logger.debug("stage t=%g done after %d iterations", t, it)
    c = op.constants(v) if status is not Status.BLOWUP or np.all(np.isfinite(v)) else \
        np.full(C, np.nan)
    u = op.assemble(v, c)
    res = SolveResult(status, v, c, u, history, op.exponents, operator=op)
    if blow is not None:
        res.blowup_node = blow
        res.blowup_point = op.grid.nodes[blow].copy()
    return res


def solve(s: SourceSet, cfg: IterationConfig | None = None, grid: QuadratureGrid | None = None,
          grid_config: GridConfig | None = None) -> SolveResult:
    grid = grid or build_grid(s, grid_config)
    return solve_fixed_point(TodaOperator(s, grid), cfg)


@dataclass
class AssembledSolution:
    u: np.ndarray
    nodes: np.ndarray
    chart: np.ndarray
    metadata: dict


def assemble_solution(result: SolveResult) -> AssembledSolution:
    if not result.converged:
        raise ValueError(f"cannot assemble a {result.status.value} result")
    ex = result.exponents
    return AssembledSolution(
        u=result.u, nodes=result.grid.nodes, chart=result.grid.chart,
        metadata={"beta": ex.beta.tolist(), "beta_bar": ex.beta_bar.tolist(),
                  "constants": result.constants.tolist(),
                  "target_mass": ex.target_mass.tolist()})

"""Singular source configurations, derived exponents and condition checks.

Weights are stored exactly as given.  A source set is either *scalar*
(one component, any dimension ``n >= 2``) or *Toda* (two components,
``n == 2``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi
from typing import Optional

import numpy as np

CARTAN = np.array([[2.0, -1.0], [-1.0, 2.0]])
CARTAN_INV = np.array([[2.0, 1.0], [1.0, 2.0]]) / 3.0

# margins inside this band are flagged as indeterminate
BOUNDARY_BAND = 1e-12


class ConfigurationError(ValueError):
    """Invalid source configuration or family parameter."""


@dataclass(frozen=True)
class SourceSet:
    """Points ``P_1..P_m`` in R^n with per-component weights.

    ``weights`` has shape ``(components, m)``.  ``far_exponent`` overrides
    the scalar far-field exponent ``2 - sum(beta)``; it is used for normal
    solutions whose mass is prescribed independently of the weights (single
    source validation, the four-point non-existence family).  ``validation``
    relaxes the weight range from ``[0, 1)`` to ``(-1, 1)``.
    """

    points: np.ndarray
    weights: np.ndarray
    dimension: int = 2
    far_exponent: Optional[float] = None
    validation: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, self.dimension)
        w = np.asarray(self.weights, dtype=float)
        if w.ndim == 1:
            w = w.reshape(1, -1)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        pts.flags.writeable = False
        w.flags.writeable = False
        self._validate()

    def _validate(self):
        n, pts, w = self.dimension, self.points, self.weights
        if n < 2:
            raise ConfigurationError(f"dimension must be >= 2, got {n}")
        if pts.ndim != 2 or pts.shape[1] != n:
            raise ConfigurationError(f"points must have shape (m, {n}), got {pts.shape}")
        if w.shape[0] not in (1, 2):
            raise ConfigurationError("weights must have 1 (scalar) or 2 (Toda) rows")
        if w.shape[1] != pts.shape[0]:
            raise ConfigurationError(
                f"{w.shape[1]} weight columns for {pts.shape[0]} points")
        if w.shape[0] == 2 and n != 2:
            raise ConfigurationError("Toda mode requires dimension 2")
        if w.shape[0] == 2 and self.far_exponent is not None:
            raise ConfigurationError("far_exponent override is scalar-only")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise ConfigurationError("non-finite coordinates or weights")
        lo = -1.0 if self.validation else 0.0
        bad = (w < lo) | (w >= 1.0)
        if self.validation:
            bad |= w <= -1.0
        if np.any(bad):
            i, l = np.argwhere(bad)[0]
            rng = "(-1, 1)" if self.validation else "[0, 1)"
            raise ConfigurationError(
                f"weight beta[{i},{l}] = {w[i, l]!r} outside {rng}")
        m = pts.shape[0]
        if m > 1:
            d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
            d[np.diag_indices(m)] = np.inf
            if d.min() <= 0.0:
                a, b = np.unravel_index(np.argmin(d), d.shape)
                raise ConfigurationError(f"points {a} and {b} coincide")

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def components(self) -> int:
        return self.weights.shape[0]

    @property
    def is_toda(self) -> bool:
        return self.components == 2

    def min_distance(self) -> float:
        if self.m < 2:
            return np.inf
        d = np.linalg.norm(self.points[:, None, :] - self.points[None, :, :], axis=-1)
        d[np.diag_indices(self.m)] = np.inf
        return float(d.min())

    def translated(self, shift) -> "SourceSet":
        return SourceSet(self.points + np.asarray(shift, dtype=float), self.weights,
                         self.dimension, self.far_exponent, self.validation)


def sphere_measure(n: int) -> float:
    """Surface measure of the unit sphere S^n in R^{n+1}."""
    return 2.0 * pi ** ((n + 1) / 2.0) / gamma((n + 1) / 2.0)


def gamma_n(n: int) -> float:
    """Normalizing constant of log(1/|x|) as fundamental solution of (-Delta)^{n/2}."""
    if n < 2:
        raise ValueError(f"gamma_n needs n >= 2, got {n}")
    return gamma(n) / 2.0 * sphere_measure(n)


@dataclass(frozen=True)
class DerivedExponents:
    beta: np.ndarray        # far-field exponents, one per component
    beta_bar: np.ndarray    # normalized masses
    target_mass: np.ndarray

    def as_dict(self):
        return {"beta": self.beta.tolist(), "beta_bar": self.beta_bar.tolist(),
                "target_mass": self.target_mass.tolist()}


def derived_exponents(s: SourceSet) -> DerivedExponents:
    sums = s.weights.sum(axis=1)
    if s.is_toda:
        beta = 2.0 - sums
        beta_bar = CARTAN_INV @ beta
        return DerivedExponents(beta, beta_bar, 2.0 * pi * beta_bar)
    beta = np.array([2.0 - sums[0] if s.far_exponent is None else float(s.far_exponent)])
    return DerivedExponents(beta, beta.copy(), beta * gamma_n(s.dimension))


@dataclass
class Check:
    """A conjunction of strict inequalities ``margin > tol``."""

    holds: bool
    margins: dict
    indeterminate: bool = False

    @classmethod
    def from_margins(cls, margins: dict, tol: float = 0.0, equalities: dict | None = None):
        flat = np.concatenate([np.ravel(v) for v in margins.values()]) if margins else np.array([])
        holds = bool(np.all(flat > tol))
        near = bool(np.any(np.abs(flat) <= BOUNDARY_BAND))
        out = {k: np.asarray(v, dtype=float).tolist() for k, v in margins.items()}
        if equalities:
            eq = np.concatenate([np.ravel(v) for v in equalities.values()])
            holds = holds and bool(np.all(np.abs(eq) <= BOUNDARY_BAND))
            out.update({k: np.asarray(v, dtype=float).tolist() for k, v in equalities.items()})
        return cls(holds, out, near and not equalities)


@dataclass
class ConditionReport:
    luo_tian: Optional[Check] = None
    toda_existence: Optional[Check] = None
    beta_like: Optional[Check] = None
    barbeta_form: Optional[Check] = None
    barbeta_literal: Optional[Check] = None
    assumptions_A: dict = field(default_factory=dict)

    def as_dict(self):
        def conv(c):
            return None if c is None else {"holds": c.holds, "indeterminate": c.indeterminate,
                                           "margins": c.margins}
        return {
            "luo_tian": conv(self.luo_tian),
            "toda_existence": conv(self.toda_existence),
            "beta_like": conv(self.beta_like),
            "barbeta_form": conv(self.barbeta_form),
            "barbeta_literal": conv(self.barbeta_literal),
            "assumptions_A": {k: conv(v) for k, v in self.assumptions_A.items()},
        }


def luo_tian_margins(beta) -> dict:
    b = np.asarray(beta, dtype=float)
    return {"total": np.array([2.0 - b.sum()]), "others_exceed": b.sum() - 2.0 * b}


def toda_margins(w) -> dict:
    w = np.asarray(w, dtype=float)
    S = w.sum(axis=1)
    first = 2.0 * S[:, None] + S[::-1, None] - 3.0 * (1.0 + w)
    return {"mass_window": first, "total": 2.0 - S}


def barbeta_margins(w) -> tuple[dict, dict]:
    """(full, literal) margins of the normalized-mass form.

    The literal form lists ``beta_bar_i > 0`` and ``beta_bar_i < 1 - beta_{i,l}``;
    the full form adds positivity of ``beta_i = 2 beta_bar_i - beta_bar_{3-i}``,
    which is the image of ``sum_l beta_{i,l} < 2``.
    """
    w = np.asarray(w, dtype=float)
    beta = 2.0 - w.sum(axis=1)
    bb = CARTAN_INV @ beta
    upper = 1.0 - w - bb[:, None]
    literal = {"beta_bar": bb, "upper": upper}
    full = {"beta_bar": bb, "upper": upper, "beta": CARTAN @ bb}
    return full, literal


def beta_like_margins(w) -> dict:
    w = np.asarray(w, dtype=float)
    S = w.sum(axis=1)
    others = S[:, None] - w
    return {"others_exceed": others - w.max(axis=0)[None, :]}


def assumption_margins(b) -> dict:
    """Margins of A1..A6 for a weight list beta_1..beta_4 (or beta_1..beta_7).

    A1 and A4 are equalities: their entries are residuals, the check holds when
    ``|residual| <= BOUNDARY_BAND``.  A4, A5 need seven weights.
    """
    b = np.asarray(b, dtype=float)
    out = {
        "A1": ("eq", np.array([b[3] + b[:4].sum() - 2.0])),
        "A2": ("gt", np.array([b[0] - b[1] - b[2]])),
        "A3": ("gt", np.array([1.0 / 3.0 - b[3]])),
        "A6": ("gt", np.array([b[3] + b[0] - 1.0, 1.0 - b[3] - b[1], 1.0 - b[3] - b[2]])),
    }
    if b.size >= 7:
        out["A4"] = ("eq", np.array([b[3] + b[4:7].sum() - 2.0]))
        out["A5"] = ("gt", np.array([1.0 - b[3] - b[4]]))
    return dict(sorted(out.items()))


def _assumption_checks(b, tol) -> dict:
    checks = {}
    for name, (kind, val) in assumption_margins(b).items():
        if kind == "eq":
            checks[name] = Check.from_margins({}, tol, equalities={"residual": val})
        else:
            checks[name] = Check.from_margins({"margin": val}, tol)
    return checks


def family_weights(w) -> Optional[np.ndarray]:
    """Recover beta_1..beta_7 when ``w`` has the split two-component layout."""
    w = np.asarray(w, dtype=float)
    if w.shape != (2, 7):
        return None
    if np.any(w[0, 4:] != 0.0) or np.any(w[1, :4] != 0.0):
        return None
    return np.concatenate([w[0, :4], w[1, 4:]])


def check_conditions(s: SourceSet, tol: float = 0.0) -> ConditionReport:
    rep = ConditionReport()
    w = s.weights
    if s.is_toda:
        rep.toda_existence = Check.from_margins(toda_margins(w), tol)
        full, literal = barbeta_margins(w)
        rep.barbeta_form = Check.from_margins(full, tol)
        rep.barbeta_literal = Check.from_margins(literal, tol)
        rep.beta_like = Check.from_margins(beta_like_margins(w), tol)
        fam = family_weights(w)
        if fam is not None:
            rep.assumptions_A = _assumption_checks(fam, tol)
    else:
        rep.luo_tian = Check.from_margins(luo_tian_margins(w[0]), tol)
        if s.m in (4, 7):
            rep.assumptions_A = _assumption_checks(w[0], tol)
    return rep


def epsilon_family(epsilon: float) -> np.ndarray:
    """The seven weights beta_1..beta_7 of the explicit one-parameter family."""
    e = float(epsilon)
    if not 0.0 < e < 2.0 / 9.0:
        raise ConfigurationError(f"epsilon must lie in (0, 2/9), got {epsilon!r}")
    return np.array([1 - e, 0.5 - e, 0.5 - e, 1.5 * e, 1 - 2.5 * e, (1 + e) / 2, (1 + e) / 2])


def split_weights(b) -> np.ndarray:
    """Assign beta_1..beta_4 to component 1 and beta_5..beta_7 to component 2."""
    b = np.asarray(b, dtype=float)
    w = np.zeros((2, 7))
    w[0, :4] = b[:4]
    w[1, 4:] = b[4:7]
    return w


def build_counterexample_family(epsilon: float) -> np.ndarray:
    """Two-component weight matrix that meets A1-A6 and the beta-like
    condition while failing the existence condition."""
    b = epsilon_family(epsilon)
    w = split_weights(b)
    checks = _assumption_checks(b, 0.0)
    failed = [k for k, c in checks.items() if not c.holds]
    assert not failed, f"family violates {failed} at epsilon={epsilon}"
    assert Check.from_margins(beta_like_margins(w)).holds
    assert not Check.from_margins(toda_margins(w)).holds
    return w

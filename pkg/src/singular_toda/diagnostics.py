"""Post-processing of solve results: masses, far-field slopes, Kelvin
transforms, local blow-up values, the Pohozaev identity and the
non-existence probes."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from math import log, pi
from typing import Optional, Sequence

import numpy as np

from .discretization import INNER, GridConfig, QuadratureGrid, build_grid
from .problem_model import (CARTAN, ConfigurationError, SourceSet, _assumption_checks,
                            check_conditions, epsilon_family, gamma_n, split_weights)
from .toda_operator import IterationConfig, SolveResult, Status

logger = logging.getLogger(__name__)


# ------------------------------------------------------------------- masses

def log_density(result: SolveResult) -> np.ndarray:
    """log of ``K_i e^{p u_i}`` at the nodes, shape (components, N).

    Built from the assembled ``u`` and the raw weight ``K``, not from the
    normalized remainder, so it checks the assembly as well.
    """
    op = result.operator
    p = op.power
    logk = np.stack([f.log_values for f in op.fields]) \
        - p * op.exponents.beta[:, None] * op.u0[None, :]
    return logk + p * result.u


def masses(result: SolveResult) -> np.ndarray:
    """Total masses ``int K_i e^{p u_i}``."""
    lw = np.log(result.grid.weights)
    ld = log_density(result) + lw
    top = ld.max(axis=1, keepdims=True)
    return np.exp(top[:, 0]) * np.exp(ld - top).sum(axis=1)


def mass_check(result: SolveResult, targets=None) -> dict:
    """Relative mass residuals ``|m_i - target_i| / target_i``."""
    t = np.asarray(result.exponents.target_mass if targets is None else targets, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError(f"non-positive target mass {t.tolist()} is a degenerate input")
    m = masses(result)
    return {"masses": m.tolist(), "targets": t.tolist(),
            "relative_residual": (np.abs(m - t) / t).tolist()}


# ------------------------------------------------------------------- slopes

@dataclass
class SlopeFit:
    slope: float
    intercept: float
    spread: float
    annuli: list


def default_annuli(grid: QuadratureGrid, count: int = 6) -> np.ndarray:
    """Log-spaced annuli over ``[10 R, 1e4 R]`` in the outer chart.

    Closer in, the mass still outside the annulus biases the slope by
    ``O(r^-2)`` (the unit bubble gives 1.82 instead of 2 on ``[2R/3, R]``).
    """
    R = grid.split_radius
    return np.geomspace(10.0 * R, 1e4 * R, count + 1)


def slope_fit(u, grid: QuadratureGrid, annuli=None) -> SlopeFit:
    """Least squares ``mean(u) = -slope * mean(log r) + intercept`` over annuli.

    Means are quadrature-weighted over the nodes of each annulus, so a field
    ``a log r + b`` is recovered exactly.  ``spread`` is the range of
    ``u + slope log r`` over the fit nodes.
    """
    u = np.asarray(u, dtype=float)
    edges = default_annuli(grid) if annuli is None else np.asarray(annuli, dtype=float)
    r = grid.radius
    if edges[0] <= 0 or edges[-1] > r.max() or np.any(np.diff(edges) <= 0):
        raise ValueError(f"fit annuli {edges.tolist()} lie outside the grid")
    xs, ys, used = [], [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (r >= lo) & (r < hi)
        if not sel.any():
            continue
        w = grid.weights[sel]
        xs.append(np.dot(w, np.log(r[sel])) / w.sum())
        ys.append(np.dot(w, u[sel]) / w.sum())
        used.append(sel)
    if len(xs) < 2:
        raise ValueError("fewer than two populated fit annuli")
    A = np.stack([-np.array(xs), np.ones(len(xs))], axis=1)
    (slope, icpt), *_ = np.linalg.lstsq(A, np.array(ys), rcond=None)
    sel = np.logical_or.reduce(used)
    rem = u[sel] + slope * np.log(r[sel])
    return SlopeFit(float(slope), float(icpt), float(rem.max() - rem.min()), edges.tolist())


# ------------------------------------------------------------------- Kelvin

@dataclass
class KelvinField:
    nodes: np.ndarray
    u: np.ndarray
    log_k: Optional[np.ndarray] = None


def kelvin_transform(field_: KelvinField, beta: float, n: int = 2, center=None) -> KelvinField:
    """Inversion ``x -> x / |x|^2`` about ``center``.

    ``u~(x*) = u(x) + beta log|x|`` (equivalently ``u(x*/|x*|^2) - beta log|x*|``)
    and ``K~(x*) = |x*|^{-2n} K(x)``.  Applying it twice is the identity.
    """
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    y = np.asarray(field_.nodes, dtype=float) - c
    r2 = np.einsum("ij,ij->i", y, y)
    if np.any(r2 == 0.0):
        raise ValueError("the inversion centre is a node")
    img = y / r2[:, None]
    lr = 0.5 * np.log(r2)
    u = np.asarray(field_.u, dtype=float) + beta * lr
    lk = None if field_.log_k is None else np.asarray(field_.log_k) + 2.0 * n * lr
    return KelvinField(img + c, u, lk)


def two_point_identity_error(x, y) -> np.ndarray:
    """``| |x||y||x/|x|^2 - y/|y|^2| - |x - y| |`` row-wise."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    nx, ny = np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)
    lhs = nx * ny * np.linalg.norm(x / nx[:, None] ** 2 - y / ny[:, None] ** 2, axis=1)
    return np.abs(lhs - np.linalg.norm(x - y, axis=1))


# ------------------------------------------------------------------- sigma

@dataclass
class SigmaTable:
    point: list
    radii: list
    values: list            # one row per component
    limit: list             # value at the smallest radius
    extrapolated: list
    trend: list             # "vanishing" or "concentrating" per component


def nodal_masses(result: SolveResult) -> np.ndarray:
    return np.exp(log_density(result) + np.log(result.grid.weights))


def sigma_estimate(nodal, grid: QuadratureGrid, point, radii, min_nodes: int = 8,
                   threshold: float = 0.05) -> SigmaTable:
    """Local masses ``(1/gamma_n) int_{B_r(P)} K_i e^{p u_i}`` for decreasing r.

    ``nodal`` holds quadrature-weighted densities (components, N).  The trend
    is a Richardson-style extrapolation of the last three radii.
    """
    nodal = np.atleast_2d(np.asarray(nodal, dtype=float))
    radii = np.sort(np.asarray(radii, dtype=float))[::-1]
    P = np.asarray(point, dtype=float)
    d = np.linalg.norm(grid.nodes - P, axis=1)
    g = gamma_n(grid.dimension)
    vals = []
    for r in radii:
        sel = d < r
        if sel.sum() < min_nodes:
            raise ValueError(f"radius {r:g} is below the grid resolution at {P.tolist()}")
        vals.append(nodal[:, sel].sum(axis=1) / g)
    vals = np.array(vals).T
    lim, ext, trend = [], [], []
    for row in vals:
        e = row[-1]
        if len(row) >= 3:
            d1, d2 = row[-3] - row[-2], row[-2] - row[-1]
            if d1 > 0 and 0 <= d2 < d1:
                q = d2 / d1
                e = row[-1] - d2 * q / (1.0 - q)
        e = max(e, 0.0)
        lim.append(float(row[-1]))
        ext.append(float(e))
        trend.append("concentrating" if e > threshold else "vanishing")
    return SigmaTable(P.tolist(), radii.tolist(), vals.tolist(), lim, ext, trend)


# ------------------------------------------------------------------ Pohozaev

def pohozaev_residual(s1: float, s2: float, a1: float, a2: float):
    """``s1^2 + s2^2 - s1 s2 - s1 (1 - a1) - s2 (1 - a2)`` and whether
    ``s1 >= 1 - a1 or s2 >= 1 - a2`` (None for the trivial pair)."""
    if a1 >= 1.0 or a2 >= 1.0:
        raise ValueError("Pohozaev identity needs alpha_i < 1")
    # paired sums commute exactly in floating point, so swapping components is exact
    res = (s1 * s1 + s2 * s2) - s1 * s2 - (s1 * (1.0 - a1) + s2 * (1.0 - a2))
    dich = None if (s1 == 0.0 and s2 == 0.0) else bool(s1 >= 1.0 - a1 or s2 >= 1.0 - a2)
    return res, dich


def half_blowup_root(a1: float) -> float:
    """Nonzero root of the identity with ``s2 = 0``: ``s1 = 1 - a1``."""
    return 1.0 - a1


# --------------------------------------------------------- discrete Laplacian

def polar_laplacian_residual(result: SolveResult, r_range=(0.2, 2.0)) -> dict:
    """Five-point polar Laplacian of ``u`` on the structured inner chart,
    compared with the equation's right-hand side (2D only).

    Stencils must lie in the pure background (outside all source patches).
    Returns the sup and RMS of ``-Delta_h u - rhs`` and the spacing.
    """
    g = result.grid
    if g.dimension != 2:
        raise ValueError("the five-point residual is two-dimensional")
    idx = g.inner_index
    nr, na = idx.shape
    a = g.stretch
    s = g.inner_s
    hs = s[1] - s[0]
    dth = 2.0 * pi / na
    op = result.operator
    dens = np.exp(log_density(result))
    rhs = op.coupling @ dens if dens.shape[0] > 1 else dens
    pure = np.zeros(g.size, dtype=bool)
    pure[g.chart == INNER] = g.blend[g.chart == INNER] >= 1.0
    k = np.arange(1, nr - 1)
    r = a * np.sinh(s[k] / a)
    keep = (r >= r_range[0]) & (r <= r_range[1])
    k, r = k[keep], r[keep]
    c = idx[k]
    up, dn = idx[k + 1], idx[k - 1]
    lt, rt = np.roll(c, 1, axis=1), np.roll(c, -1, axis=1)
    ok = np.all([(m >= 0) for m in (c, up, dn, lt, rt)], axis=0)
    for m in (c, up, dn, lt, rt):
        ok &= pure[np.where(m >= 0, m, 0)]
    out = {"sup": [], "rms": [], "h": float(hs), "nodes": int(ok.sum())}
    if not ok.any():
        raise ValueError("no interior five-point stencils in the requested range")
    rp = np.cosh(s[k] / a)[:, None]
    rpp = (np.sinh(s[k] / a) / a)[:, None]
    rr = r[:, None]
    for i in range(result.u.shape[0]):
        u = result.u[i]
        uc, uu, ud, ul, ur = (u[np.where(m >= 0, m, 0)] for m in (c, up, dn, lt, rt))
        us = (uu - ud) / (2 * hs)
        uss = (uu - 2 * uc + ud) / hs ** 2
        utt = (ul - 2 * uc + ur) / dth ** 2
        lap = (uss - us * rpp / rp) / rp ** 2 + us / (rp * rr) + utt / rr ** 2
        res = (-lap - rhs[i][np.where(c >= 0, c, 0)])[ok]
        out["sup"].append(float(np.abs(res).max()))
        out["rms"].append(float(np.sqrt(np.mean(res ** 2))))
    return out


# ------------------------------------------------------------------- report

@dataclass
class DiagnosticsReport:
    status: str
    masses: list
    targets: list
    mass_residual: list
    slopes: list
    slope_targets: list
    slope_spread: list
    far_remainder: list
    sigma: list = field(default_factory=list)
    kelvin_roundtrip: Optional[float] = None
    laplacian: Optional[dict] = None

    def as_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def far_remainder(result: SolveResult) -> list:
    """sup |v_i| on the outermost ring (cancellation at infinity)."""
    r = result.grid.radius
    ring = r >= r.max() * (1.0 - 1e-12)
    return np.abs(result.v[:, ring]).max(axis=1).tolist()


def diagnose(result: SolveResult, sigma_points=None, sigma_radii=None) -> DiagnosticsReport:
    ex = result.exponents
    g = result.grid
    if result.converged:
        mc = mass_check(result)
        fits = [slope_fit(u, g) for u in result.u]
        far = far_remainder(result)
    else:
        mc = {"masses": [float("nan")] * len(ex.beta), "targets": ex.target_mass.tolist(),
              "relative_residual": [float("nan")] * len(ex.beta)}
        fits, far = [], [float("nan")] * len(ex.beta)
    rep = DiagnosticsReport(
        status=result.status.value, masses=mc["masses"], targets=mc["targets"],
        mass_residual=mc["relative_residual"], slopes=[f.slope for f in fits],
        slope_targets=ex.beta.tolist(), slope_spread=[f.spread for f in fits],
        far_remainder=far)
    if result.converged or np.all(np.isfinite(result.u)):
        kf = KelvinField(g.nodes, result.u[0])
        back = kelvin_transform(kelvin_transform(kf, ex.beta[0], g.dimension, g.center),
                                ex.beta[0], g.dimension, g.center)
        rep.kelvin_roundtrip = float(np.abs(back.u - kf.u).max())
        if sigma_points is not None:
            nodal = nodal_masses(result)
            radii = sigma_radii if sigma_radii is not None else default_sigma_radii(g)
            for P in sigma_points:
                try:
                    rep.sigma.append(asdict(sigma_estimate(nodal, g, P, radii)))
                except ValueError as err:
                    rep.sigma.append({"point": list(map(float, P)), "error": str(err)})
        if result.converged and g.dimension == 2:
            try:
                rep.laplacian = polar_laplacian_residual(result)
            except ValueError:
                rep.laplacian = None
    return rep


def default_sigma_radii(grid: QuadratureGrid) -> np.ndarray:
    top = 0.5 * float(np.min(grid.patch_radii)) if len(grid.patch_radii) else 0.5
    return top * 0.5 ** np.arange(5)


# ------------------------------------------------------------------- probes

@dataclass(frozen=True)
class ProbeSpec:
    """One leg of a non-existence probe.

    ``kind`` is "scalar" (four sources, the moving one is P4 at distance s)
    or "toda" (seven sources, P6 and P7 at distances s and 2s).  ``weights``
    are beta_1..beta_4 (scalar) or beta_1..beta_7 (Toda); ``epsilon`` takes
    them from the explicit family instead.
    """
    kind: str = "scalar"
    epsilon: Optional[float] = 0.1
    weights: Optional[tuple] = None
    scales: tuple = (5.0, 10.0, 20.0)
    p4_distance: float = 10.0          # Toda legs: fixed position of P4
    sanity: bool = False

    def beta(self) -> np.ndarray:
        if self.weights is not None:
            b = np.asarray(self.weights, dtype=float)
        elif self.epsilon is not None:
            b = epsilon_family(self.epsilon)
        else:
            raise ConfigurationError("probe needs weights or epsilon")
        need = 4 if self.kind == "scalar" else 7
        if self.kind not in ("scalar", "toda"):
            raise ConfigurationError(f"unknown probe kind {self.kind!r}")
        if self.weights is None and self.kind == "scalar":
            b = b[:4]
        if b.size != need:
            raise ConfigurationError(f"{self.kind} probe needs {need} weights, got {b.size}")
        if np.any((b <= 0) | (b >= 1)):
            raise ConfigurationError("probe weights must lie in (0, 1)")
        return b


TRIANGLE = np.array([[1.0, 0.0], [-0.5, 3 ** 0.5 / 2], [-0.5, -(3 ** 0.5) / 2]])
P5 = np.array([0.0, 2.0])


def probe_sources(spec: ProbeSpec, s: float) -> SourceSet:
    b = spec.beta()
    if spec.kind == "scalar":
        pts = np.vstack([TRIANGLE, [s, 0.0]])
        return SourceSet(pts, b[None, :], 2, far_exponent=2.0 * b[3])
    pts = np.vstack([TRIANGLE, [spec.p4_distance, 0.0], P5, [-s, 0.0], [0.0, -2.0 * s]])
    return SourceSet(pts, split_weights(b))


def probe_assumptions(spec: ProbeSpec) -> dict:
    b = spec.beta()
    return {k: {"holds": c.holds, "margins": c.margins}
            for k, c in _assumption_checks(b, 0.0).items()}


def concentration_candidates(spec: ProbeSpec, src: SourceSet) -> list:
    """P1 for the scalar family; P1..P5 for the Toda family."""
    if spec.kind == "scalar":
        return [src.points[0]]
    return [src.points[l] for l in range(5)]


@dataclass
class ProbeRow:
    scale: float
    status: str
    iterations: int
    sup_psi_max: float
    sup_psi_last: float
    mass_residual: list
    slope_error: list
    sigma: list
    blowup_point: Optional[list]
    concentration: float = float("nan")

    @property
    def concentrated(self) -> bool:
        return bool(self.concentration >= CONCENTRATION_FRACTION)

    @property
    def degradation(self) -> float:
        return float(np.nanmax(np.concatenate([self.mass_residual, self.slope_error])))


@dataclass
class ProbeReport:
    kind: str
    sanity: bool
    weights: list
    assumptions: dict
    rows: list
    trajectories: dict
    verdict: str
    concentration: str = "diffuse"

    def as_dict(self):
        d = asdict(self)
        d.pop("trajectories")
        return d


CONCENTRATION_FRACTION = 0.9


def concentration_fraction(sigma_tables, targets, n: int) -> float:
    """Largest share of a component's total mass found inside the smallest
    ball around a candidate point."""
    total = np.asarray(targets, dtype=float) / gamma_n(n)
    best = 0.0
    for t in sigma_tables:
        if "error" in t:
            continue
        best = max(best, float(np.max(np.asarray(t["limit"]) / total)))
    return best


def probe_verdict(rows: Sequence[ProbeRow], sanity: bool) -> str:
    """Violating legs: no convergence at the largest scale, or converged runs
    whose worst mass/slope error grows strictly with the scale.  Sanity legs:
    convergence at every scale."""
    conv = [r.status == Status.CONVERGED.value for r in rows]
    if sanity:
        return "converged" if all(conv) else "inconclusive"
    if not conv[-1]:
        return "consistent-with-nonexistence"
    if all(conv):
        deg = [r.degradation for r in rows]
        if all(b > a for a, b in zip(deg, deg[1:])):
            return "consistent-with-nonexistence"
    return "inconclusive"


def concentration_verdict(rows: Sequence[ProbeRow]) -> str:
    """"concentrating" when at every scale a candidate point holds at least
    ``CONCENTRATION_FRACTION`` of a component's mass inside the smallest sigma
    ball (a bubble squeezed to the grid scale), "diffuse" when no scale does."""
    flags = [r.concentrated for r in rows]
    if all(flags):
        return "concentrating"
    return "diffuse" if not any(flags) else "mixed"


def nonexistence_probe(spec: ProbeSpec, cfg: IterationConfig | None = None,
                       grid_config: GridConfig | None = None) -> ProbeReport:
    """Solve the family at each scale and record what the solver does.

    Observational only: a non-converged run is a finding about the
    discretization, not a proof.
    """
    from .liouville_n import solve_n
    from .toda_operator import solve

    cfg = cfg or IterationConfig()
    b = spec.beta()
    rows, traj = [], {}
    for s in spec.scales:
        src = probe_sources(spec, float(s))
        grid = build_grid(src, grid_config)
        res = solve(src, cfg, grid) if spec.kind == "toda" else solve_n(src, cfg, grid)
        hist = res.history
        psi = [h["sup_psi"] for h in hist]
        traj[float(s)] = hist
        if res.converged:
            mc = mass_check(res)
            slopes = [slope_fit(u, grid).slope for u in res.u]
            serr = (np.abs(np.array(slopes) - res.exponents.beta) / res.exponents.beta).tolist()
            mres = mc["relative_residual"]
        else:
            serr = [float("nan")] * res.v.shape[0]
            mres = [float("nan")] * res.v.shape[0]
        sig = []
        if np.all(np.isfinite(res.v)):
            nodal = nodal_masses(res) if res.converged else _frozen_masses(res)
            pts = concentration_candidates(spec, src)
            if res.blowup_point is not None:
                pts = pts + [res.blowup_point]
            for P in pts:
                try:
                    sig.append(asdict(sigma_estimate(nodal, grid, P, default_sigma_radii(grid))))
                except ValueError as err:
                    sig.append({"point": list(map(float, P)), "error": str(err)})
        rows.append(ProbeRow(float(s), res.status.value, len(hist), float(np.nanmax(psi)),
                             float(psi[-1]), mres, serr, sig,
                             None if res.blowup_point is None else res.blowup_point.tolist(),
                             concentration_fraction(sig, res.exponents.target_mass,
                                                    src.dimension)))
        logger.info("probe %s s=%g -> %s after %d iterations", spec.kind, s, res.status.value,
                    len(hist))
    return ProbeReport(spec.kind, spec.sanity, b.tolist(), probe_assumptions(spec), rows, traj,
                       probe_verdict(rows, spec.sanity), concentration_verdict(rows))


def _frozen_masses(res: SolveResult) -> np.ndarray:
    """Normalized nodal masses of the last iterate (non-converged runs)."""
    op = res.operator
    return op.masses(res.v, op.constants(res.v))


# -------------------------------------------------------------------- output

def history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["iteration", "t", "theta", "step", "residual", "sup_psi"]
    w.writerow(cols)
    for h in history:
        w.writerow([h["iteration"]] + [repr(float(h[c])) for c in cols[1:]])
    return buf.getvalue()


def trajectory_csv(report: ProbeReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scale", "iteration", "t", "theta", "residual", "sup_psi"])
    for s, hist in report.trajectories.items():
        for h in hist:
            w.writerow([repr(s), h["iteration"], repr(float(h["t"])), repr(float(h["theta"])),
                        repr(float(h["residual"])), repr(float(h["sup_psi"]))])
    return buf.getvalue()


def sigma_csv(tables) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point", "radius", "component", "sigma"])
    for t in tables:
        if "error" in t:
            continue
        for i, row in enumerate(t["values"]):
            for r, v in zip(t["radii"], row):
                w.writerow([" ".join(repr(float(c)) for c in t["point"]), repr(r), i + 1,
                            repr(float(v))])
    return buf.getvalue()

"""Two-chart quadrature of R^n with graded polar patches at the sources.

Layout of a grid:

* inner chart: polar background grid on the ball of radius ``R_split``
  about ``center``, uniform in a stretched radial variable
  ``r = a sinh(s / a)`` with end-corrected trapezoid weights and a
  product rule on the unit sphere;
* outer chart: Kelvin image of the ball of radius ``1 / R_split``,
  ``x = y / |y|^2`` with measure factor ``|y|^{-2n}``, radially graded
  toward ``y = 0`` like a source patch;
* one polar patch per source, geometric radial grading ``r_k = rho q^k``
  plus a power-mapped core disk.

Patches blend into the background through a smooth partition of unity,
so every node weight is ``(cutoff factor) * (cell measure)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import gamma, log, pi
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import roots_jacobi, roots_legendre

from .problem_model import SourceSet, derived_exponents

INNER = 0
OUTER = 1
PATCH0 = 2  # chart tag of source patch l is PATCH0 + l

# blend starts at this fraction of the patch radius
CUTOFF_START = 0.3
MIN_CORE_RADIUS = 1e-11   # relative to max(1, |P|): keeps patch nodes distinct in float64


class GridError(ValueError):
    """Grid construction or weight evaluation failed."""


# ---------------------------------------------------------------- base profile

_TAYLOR = np.array([(-1) ** (k + 1) / k for k in range(1, 6)])


class BaseProfile:
    """Radial profile equal to ``-log|x - center|`` outside the unit ball.

    Inside, the degree-5 Taylor polynomial of ``-log(r)/1 = -log(t)/2`` in
    ``t = r^2`` about ``t = 1``; it matches five derivatives at the seam and is
    monotone on ``[0, 1]``.
    """

    blend_radius = 1.0
    smoothness = 5

    def __init__(self, center=None, dimension: int = 2):
        self.dimension = dimension
        self.center = np.zeros(dimension) if center is None else np.asarray(center, float)

    @staticmethod
    def radial(r):
        r = np.asarray(r, dtype=float)
        t = r * r
        inside = t < 1.0
        out = np.empty_like(t)
        with np.errstate(divide="ignore"):
            out[~inside] = -np.log(r[~inside])
        d = t[inside] - 1.0
        poly = np.zeros_like(d)
        for c in _TAYLOR[::-1]:
            poly = (poly + c) * d
        out[inside] = -0.5 * poly
        return out

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.radial(np.linalg.norm(x - self.center, axis=-1))


def build_u0(center=None, dimension: int = 2) -> BaseProfile:
    return BaseProfile(center, dimension)


# -------------------------------------------------------------- 1D/sphere rules

@lru_cache(maxsize=None)
def gregory_weights(n: int, order: int = 6) -> tuple:
    """Weights (unit spacing) for nodes 0..n, trapezoid with end corrections.

    Exact for polynomials of degree < 2*order on [0, n]; corrections touch the
    first and last ``order`` nodes.
    """
    if n < 2 * order + 1:
        order = max(1, (n - 1) // 2)
    a = np.ones(n + 1)
    a[0] = a[-1] = 0.5
    idx = np.arange(order)
    x = np.arange(n + 1) / n
    rows, rhs = [], []
    for d in range(2 * order):
        base = np.dot(a, x ** d) / n
        rows.append(np.concatenate([x[idx] ** d, x[n - idx] ** d]) / n)
        rhs.append(1.0 / (d + 1) - base)
    corr = np.linalg.solve(np.array(rows), np.array(rhs))
    w = a.copy()
    w[idx] += corr[:order]
    w[n - idx] += corr[order:]
    return tuple(w)


def sphere_rule(n: int, resolution: int):
    """Product rule on S^{n-1}: unit vectors and weights summing to |S^{n-1}|.

    ``resolution`` is the number of azimuthal nodes; each polar direction gets
    ``resolution // 2`` Gauss-Jacobi nodes.
    """
    k = int(resolution)
    th = 2.0 * pi * (np.arange(k) + 0.5) / k
    pts = np.stack([np.cos(th), np.sin(th)], axis=1)
    wts = np.full(k, 2.0 * pi / k)
    for dim in range(3, n + 1):
        # S^{dim-1}: t = last coordinate with weight (1 - t^2)^{(dim-3)/2}
        lam = (dim - 3) / 2.0
        t, wt = roots_jacobi(max(2, k // 2), lam, lam)
        sq = np.sqrt(1.0 - t * t)
        pts = np.concatenate(
            [sq[:, None, None] * pts[None, :, :],
             np.broadcast_to(t[:, None, None], (len(t), len(pts), 1))], axis=2
        ).reshape(-1, dim)
        wts = (wt[:, None] * wts[None, :]).ravel()
    return pts, wts


def graded_radial_rule(radius: float, ratio: float, panels: int, order: int,
                       core_nodes: int = 6, core_power: float = 5.0):
    """Nodes/weights for ``int_0^radius g(r) dr`` with grading toward r = 0.

    Geometric panels ``[radius q^{k+1}, radius q^k]`` carry Gauss-Legendre
    nodes; the core ``[0, radius q^K]`` uses ``r = r_K tau^p`` so integrands
    like ``r^{1-2 beta} g`` stay smooth in ``tau`` for beta up to 1 - 1/p.
    """
    x, w = roots_legendre(order)
    edges = radius * ratio ** np.arange(panels + 1)
    lo, hi = edges[1:], edges[:-1]
    half = 0.5 * (hi - lo)
    r = ((lo + hi)[:, None] * 0.5 + half[:, None] * x[None, :]).ravel()
    wr = (half[:, None] * w[None, :]).ravel()
    rk = edges[-1]
    tc, wc = roots_legendre(core_nodes)
    tau = 0.5 * (tc + 1.0)
    rc = rk * tau ** core_power
    wcr = 0.5 * wc * rk * core_power * tau ** (core_power - 1.0)
    r = np.concatenate([rc, r])
    wr = np.concatenate([wcr, wr])
    order_ = np.argsort(r)
    return r[order_], wr[order_]


def cutoff(t):
    """Smooth step: 1 for t <= CUTOFF_START, 0 for t >= 1."""
    t = np.asarray(t, dtype=float)
    u = np.clip((t - CUTOFF_START) / (1.0 - CUTOFF_START), 0.0, 1.0)

    def f(z):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)

    a, b = f(1.0 - u), f(u)
    return a / (a + b)


# ------------------------------------------------------------------------ grid

@dataclass(frozen=True)
class GridConfig:
    n_radial: int = 32
    n_angular: int = 48
    stretch: float = 2.0
    gregory_order: int = 6
    patch_ratio: float = 0.7
    patch_panels: int = 8
    patch_order: int = 4
    patch_angular: int = 24
    patch_radius: float = 0.5
    outer_ratio: float = 0.5
    outer_panels: int = 4
    outer_order: int = 4
    core_nodes: int = 6
    core_power: float = 5.0
    split_radius: Optional[float] = None
    refine: int = 0
    log_cap: float = 600.0

    @classmethod
    def for_dimension(cls, n: int, **kw) -> "GridConfig":
        if n == 2:
            return cls(**kw)
        base = dict(n_radial=16, n_angular=12, patch_angular=8, patch_panels=6,
                    outer_panels=3, outer_order=3)
        if n > 3:
            base.update(n_radial=10, n_angular=6, patch_angular=4)
        base.update(kw)
        return cls(**base)

    def refined(self, k: int = 1) -> "GridConfig":
        return replace(self, refine=self.refine + k)

    def effective(self) -> "GridConfig":
        """Resolution after applying ``refine``: spacings halve per level."""
        k = self.refine
        if k == 0:
            return self
        f = 2 ** k
        return replace(
            self, refine=0, n_radial=self.n_radial * f, n_angular=self.n_angular * f,
            patch_angular=self.patch_angular * f, patch_ratio=self.patch_ratio ** (1.0 / f),
            patch_panels=self.patch_panels * f, outer_ratio=self.outer_ratio ** (1.0 / f),
            outer_panels=self.outer_panels * f)

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray
    cells: np.ndarray          # unblended cell measure, used by the self-cell term
    chart: np.ndarray
    dimension: int
    center: np.ndarray
    split_radius: float
    patch_radii: np.ndarray
    config: GridConfig
    # structured inner-chart data for finite differences: node index per
    # (radial, angular) slot, -1 where the background node was dropped
    inner_index: np.ndarray = field(repr=False, default=None)
    inner_s: np.ndarray = field(repr=False, default=None)
    stretch: float = 2.0
    blend: np.ndarray = field(repr=False, default=None)  # background factor 1 - sum chi

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.nodes - self.center, axis=1)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def chart_mask(self, tag: int) -> np.ndarray:
        return self.chart == tag


def _patch_radii(s: SourceSet, cfg: GridConfig, center, R, h_bg) -> np.ndarray:
    m = s.m
    if m == 0:
        return np.zeros(0)
    pts = s.points
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d[np.diag_indices(m)] = np.inf
    nearest = d.min(axis=1)
    rc = np.linalg.norm(pts - center, axis=1)
    # grow the patch where the background is coarse so the blend is resolved
    want = np.maximum(cfg.patch_radius, 4.0 * h_bg(rc))
    rho = np.minimum(0.5 * nearest, want)
    rho = np.minimum(rho, 0.5 * (R - rc))
    if np.any(rho <= 0) or np.any(rho < 1e-3 * cfg.patch_radius):
        l = int(np.argmin(rho))
        raise GridError(f"source {l} too close to another source or to the chart seam "
                        f"(patch radius {rho[l]:.3g})")
    return rho


def build_grid(s: SourceSet, cfg: GridConfig | None = None, center=None) -> QuadratureGrid:
    cfg0 = cfg or GridConfig.for_dimension(s.dimension)
    cfg = cfg0.effective()
    n = s.dimension
    center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    if s.m:
        reach = np.linalg.norm(s.points - center, axis=1).max()
    else:
        reach = 0.0
    R = cfg.split_radius if cfg.split_radius is not None else 4.0 * max(1.0, reach)
    if R <= reach:
        raise GridError(f"split radius {R} does not enclose the sources (reach {reach})")
    a = cfg.stretch
    S = a * np.arcsinh(R / a)
    hs = S / cfg.n_radial
    sph, sphw = sphere_rule(n, cfg.n_angular)
    dtheta = 2.0 * pi / cfg.n_angular

    def h_bg(r):
        return np.maximum(hs * np.cosh(np.arcsinh(r / a)), r * dtheta)

    rho = _patch_radii(s, cfg, center, R, h_bg)

    # inner background
    k = np.arange(1, cfg.n_radial + 1)
    sk = k * hs
    rk = a * np.sinh(sk / a)
    gw = np.asarray(gregory_weights(cfg.n_radial, cfg.gregory_order))[1:]
    wr = gw * hs * np.cosh(sk / a) * rk ** (n - 1)
    x_in = center + (rk[:, None, None] * sph[None, :, :]).reshape(-1, n)
    cell_in = (wr[:, None] * sphw[None, :]).ravel()
    factor = np.ones(len(x_in))
    for l in range(s.m):
        factor -= cutoff(np.linalg.norm(x_in - s.points[l], axis=1) / rho[l])
    factor = np.clip(factor, 0.0, 1.0)
    keep = factor > 0.0
    slot = -np.ones(len(x_in), dtype=int)
    slot[keep] = np.arange(keep.sum())
    inner_index = slot.reshape(cfg.n_radial, len(sph))

    nodes = [x_in[keep]]
    weights = [cell_in[keep] * factor[keep]]
    cells = [cell_in[keep]]
    chart = [np.full(keep.sum(), INNER)]
    blend = [factor[keep]]

    # outer chart: y in B_{1/R}, x = y / |y|^2
    ry, wy = graded_radial_rule(1.0 / R, cfg.outer_ratio, cfg.outer_panels, cfg.outer_order,
                                cfg.core_nodes, cfg.core_power)
    wy = wy * ry ** (n - 1) * ry ** (-2 * n)
    x_out = center + ((1.0 / ry)[:, None, None] * sph[None, :, :]).reshape(-1, n)
    w_out = (wy[:, None] * sphw[None, :]).ravel()
    nodes.append(x_out)
    weights.append(w_out)
    cells.append(w_out)
    chart.append(np.full(len(x_out), OUTER))
    blend.append(np.ones(len(x_out)))

    # source patches
    psph, psphw = sphere_rule(n, cfg.patch_angular)
    for l in range(s.m):
        # keep tau^{p n (1 - beta) - 1} free of negative powers for the strongest
        # weight here, but leave the innermost node resolvable next to P_l
        top = float(s.weights[:, l].max())
        power = max(cfg.core_power, 1.0 / (n * (1.0 - top))) if top > 0 else cfg.core_power
        r_core = rho[l] * cfg.patch_ratio ** cfg.patch_panels
        tau_min = 0.5 * (1.0 + roots_legendre(cfg.core_nodes)[0][0])
        floor = MIN_CORE_RADIUS * max(1.0, float(np.linalg.norm(s.points[l])))
        power = min(power, log(floor / r_core) / log(tau_min))
        rp, wp = graded_radial_rule(rho[l], cfg.patch_ratio, cfg.patch_panels, cfg.patch_order,
                                    cfg.core_nodes, power)
        xp = s.points[l] + (rp[:, None, None] * psph[None, :, :]).reshape(-1, n)
        cp = ((wp * rp ** (n - 1))[:, None] * psphw[None, :]).ravel()
        chi = cutoff(np.repeat(rp / rho[l], len(psph)))
        ok = chi > 0.0
        nodes.append(xp[ok])
        weights.append(cp[ok] * chi[ok])
        cells.append(cp[ok])
        chart.append(np.full(ok.sum(), PATCH0 + l))
        blend.append(np.zeros(ok.sum()))

    g = QuadratureGrid(
        nodes=np.concatenate(nodes), weights=np.concatenate(weights),
        cells=np.concatenate(cells), chart=np.concatenate(chart), dimension=n,
        center=center, split_radius=float(R), patch_radii=rho, config=cfg0,
        inner_index=inner_index, inner_s=sk, stretch=a, blend=np.concatenate(blend))
    _check_grid(g, s)
    return g


def _check_grid(g: QuadratureGrid, s: SourceSet):
    if not np.all(g.weights > 0):
        raise GridError("non-positive quadrature weight")
    if len(cKDTree(g.nodes).query_pairs(0.0, output_type="ndarray")):
        raise GridError("two grid nodes coincide")
    for l in range(s.m):
        if np.min(np.linalg.norm(g.nodes - s.points[l], axis=1)) == 0.0:
            raise GridError(f"a node coincides with source {l}")


# ---------------------------------------------------------------- weight field

@dataclass
class WeightField:
    component: int
    log_values: np.ndarray
    exponents: np.ndarray  # singular exponent of |x - P_l| at each source

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)


def log_weight(s: SourceSet, i: int, x, power: float) -> np.ndarray:
    """log K_i(x) = -power * sum_l beta_{i,l} log|x - P_l|."""
    x = np.atleast_2d(x)
    out = np.zeros(len(x))
    for l in range(s.m):
        b = s.weights[i, l]
        if b != 0.0:
            out -= power * b * np.log(np.linalg.norm(x - s.points[l], axis=1))
    return out


def eval_weight_field(s: SourceSet, i: int, profile: BaseProfile, grid: QuadratureGrid,
                      log_cap: float | None = None) -> WeightField:
    """log of K_i e^{p beta_i u0} on the grid nodes (p = 2 for Toda, n for scalar)."""
    p = 2.0 if s.is_toda else float(s.dimension)
    beta = derived_exponents(s).beta[i]
    logk = log_weight(s, i, grid.nodes, p) + p * beta * profile(grid.nodes)
    cap = grid.config.log_cap if log_cap is None else log_cap
    if not np.all(np.isfinite(logk)):
        raise GridError("non-finite weight field value")
    if logk.max() > cap:
        j = int(np.argmax(logk))
        raise GridError(f"log weight {logk[j]:.1f} exceeds cap {cap} at node {j}; refine or "
                        "move nodes away from the sources")
    return WeightField(i, logk, p * s.weights[i])


# ---------------------------------------------------------- log-kernel matrix

def unit_ball_volume(n: int) -> float:
    return pi ** (n / 2.0) / gamma(n / 2.0 + 1.0)


def self_cell_term(cells, n: int) -> np.ndarray:
    """Mean of log(1/|x - y|) over a ball of the cell's measure centred at x."""
    a = (np.asarray(cells) / unit_ball_volume(n)) ** (1.0 / n)
    return -np.log(a) + 1.0 / n


def log_kernel_matrix(grid: QuadratureGrid, targets=None, chunk: int = 256) -> np.ndarray:
    """Matrix ``G[i, j]`` with ``sum_j G[i, j] f_j w_j ~ int k(x_i, y) f(y) dy``.

    ``k(x, y) = log(1/|x - y|)`` for ``|x - c| <= 1`` and the far form
    ``log(|x - c| / |x - y|)`` otherwise (``c`` the grid centre).  Targets
    default to the grid nodes, in which case the diagonal carries the
    self-cell average instead of the singular point value.  Rows are
    filled in a fixed order, so the matrix is bit-reproducible.
    """
    src = grid.nodes
    self_targets = targets is None
    tx = src if self_targets else np.atleast_2d(np.asarray(targets, dtype=float))
    rt = np.linalg.norm(tx - grid.center, axis=1)
    far = rt > 1.0
    scale = np.where(far, 1.0 / np.where(far, rt, 1.0), 1.0)
    G = np.empty((len(tx), len(src)))
    diag = self_cell_term(grid.cells, grid.dimension) if self_targets else None
    for lo in range(0, len(tx), chunk):
        hi = min(lo + chunk, len(tx))
        d = np.linalg.norm(tx[lo:hi, None, :] - src[None, :, :], axis=-1)
        d *= scale[lo:hi, None]
        with np.errstate(divide="ignore"):
            G[lo:hi] = -np.log(d)
        if self_targets:
            idx = np.arange(lo, hi)
            G[idx, idx] = diag[lo:hi] - np.log(scale[lo:hi])
    if not self_targets and not np.all(np.isfinite(G)):
        raise GridError("evaluation point coincides with a quadrature node")
    return G

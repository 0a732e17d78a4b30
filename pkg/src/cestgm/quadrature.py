"""Quadrature grids turning integral operators into weighted matrices.

Each node gets a one-dimensional axis (points and positive weights).  The
joint space is the tensor product over nodes, and for Markov order ``d`` the
``d``-fold product of that over consecutive time slices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .errors import GridCapExceeded, UnboundedEnvelope
from .families import Kind
from .model import ValidatedModel, coupling_terms, natural_parameter_bounds

MIN_GRID_SIZE = 16


@dataclass(frozen=True)
class GridConfig:
    grid_size: int = 201
    grid_cap: int = 2**20
    truncation_tol: float = 1e-12
    beta_eps: float = 1e-6
    max_doublings: int = 8
    # optional per-node (lo, hi) overriding the truncation rule
    bounds: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.grid_size < MIN_GRID_SIZE:
            raise ValueError(f"grid_size must be at least {MIN_GRID_SIZE}")
        if not 0 < self.truncation_tol < 1:
            raise ValueError("truncation_tol must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class Axis:
    points: np.ndarray
    weights: np.ndarray
    discrete: bool
    kind: Kind

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def lo(self) -> float:
        return float(self.points[0])

    @property
    def hi(self) -> float:
        return float(self.points[-1])


def trapezoid_axis(lo: float, hi: float, n: int, kind: Kind) -> Axis:
    pts = np.linspace(lo, hi, n)
    h = (hi - lo) / (n - 1)
    wts = np.full(n, h)
    wts[0] = wts[-1] = h / 2
    return Axis(pts, wts, False, kind)


def counting_axis(lo: int, hi: int, kind: Kind) -> Axis:
    pts = np.arange(int(lo), int(hi) + 1, dtype=float)
    return Axis(pts, np.ones_like(pts), True, kind)


@dataclass(frozen=True, eq=False)
class DiscretizedSpace:
    axes: tuple
    slices: int = 1

    @property
    def p(self) -> int:
        return len(self.axes)

    @property
    def size(self) -> int:
        """Number of joint states at a single time."""
        return int(np.prod([ax.size for ax in self.axes]))

    @property
    def total_size(self) -> int:
        return self.size**self.slices

    @cached_property
    def points(self) -> np.ndarray:
        """Single-time joint states, shape ``(size, p)``; node 0 varies slowest."""
        grids = np.meshgrid(*[ax.points for ax in self.axes], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @cached_property
    def weights(self) -> np.ndarray:
        grids = np.meshgrid(*[ax.weights for ax in self.axes], indexing="ij")
        return np.prod([g.ravel() for g in grids], axis=0)

    @cached_property
    def block_points(self) -> np.ndarray:
        """Joint states over all slices, shape ``(total_size, slices, p)``."""
        n = self.size
        idx = np.indices((n,) * self.slices).reshape(self.slices, -1).T
        return self.points[idx]

    @cached_property
    def block_weights(self) -> np.ndarray:
        w = self.weights
        out = w
        for _ in range(self.slices - 1):
            out = np.multiply.outer(out, w).ravel()
        return out

    def integrate(self, values) -> float:
        return float(np.dot(np.asarray(values).ravel(), self.block_weights))

    def with_slices(self, slices: int) -> "DiscretizedSpace":
        return DiscretizedSpace(self.axes, slices)


def _poisson_cutoff(theta_max: float, tol: float) -> int:
    """Smallest K keeping both the conditional and half-power envelope tails below tol."""
    lam = math.exp(theta_max)
    k_cond = int(stats.poisson.isf(tol, lam)) + 1
    # tail of sum_k exp((theta_max k - log k!)/2)
    size = max(64, 8 * k_cond)
    while True:
        k = np.arange(size, dtype=float)
        log_terms = 0.5 * (theta_max * k - gammaln(k + 1.0))
        # log of sum_{j > K} term_j, for every K
        tail = np.append(np.logaddexp.accumulate(log_terms[::-1])[::-1][1:], -np.inf)
        ok = np.nonzero((tail < math.log(tol)) & (k > lam))[0]
        if len(ok) and ok[0] < size - 1:
            return max(k_cond, int(ok[0]))
        size *= 2


def _gaussian_extent(model: ValidatedModel, a: int) -> tuple[float, float] | None:
    """Centered interval covering eight envelope standard deviations.

    Returns None when a coupling to an unbounded non-Gaussian statistic
    prevents an analytic bound.
    """
    prec_lo = natural_parameter_bounds(model, a)[0][0]
    kappa = 0.0
    shift = abs(float(model.spec.theta[a][1]))
    for i, b, j, c in coupling_terms(model, a):
        if i != 1:
            continue
        fam_b = model.families[b]
        if fam_b.kind is Kind.GAUSSIAN and j == 1:
            kappa += abs(c)
            continue
        lo, hi = fam_b.stat_ranges()[j]
        if not (math.isfinite(lo) and math.isfinite(hi)):
            return None
        shift += abs(c) * max(abs(lo), abs(hi))
    q = prec_lo - kappa
    if not q > 0:
        raise UnboundedEnvelope(
            f"node {a + 1}: coupling strength {kappa:g} is not dominated by "
            f"the conditional precision {prec_lo:g}"
        )
    half = shift / q + 8.0 / math.sqrt(q)
    return -half, half


def _analytic_axis(model: ValidatedModel, a: int, cfg: GridConfig) -> Axis | None:
    fam = model.families[a]
    kind = fam.kind
    n = cfg.grid_size
    tol = cfg.truncation_tol
    if kind is Kind.BINARY:
        return counting_axis(0, 1, kind)
    if kind is Kind.BINOMIAL:
        return counting_axis(0, fam.n_trials, kind)
    if kind is Kind.BETA:
        return trapezoid_axis(cfg.beta_eps, 1.0 - cfg.beta_eps, n, kind)
    bounds = natural_parameter_bounds(model, a)
    if kind is Kind.POISSON:
        hi = bounds[0][1]
        if not math.isfinite(hi):
            return None
        return counting_axis(0, _poisson_cutoff(hi, tol), kind)
    if kind is Kind.EXPONENTIAL:
        rate = bounds[0][0]
        if not math.isfinite(rate):
            return None
        if rate <= 0:
            raise UnboundedEnvelope(f"node {a + 1}: conditional rate can reach {rate:g}")
        length = max(math.log(1.0 / tol), 2.0 * math.log(2.0 / (rate * tol))) / rate
        return trapezoid_axis(0.0, length, n, kind)
    ext = _gaussian_extent(model, a)
    if ext is None:
        return None
    return trapezoid_axis(ext[0], ext[1], n, kind)


def _default_axis(model: ValidatedModel, a: int, cfg: GridConfig) -> Axis:
    kind = model.families[a].kind
    if kind is Kind.POISSON:
        return counting_axis(0, 31, kind)
    if kind is Kind.EXPONENTIAL:
        return trapezoid_axis(0.0, 32.0, cfg.grid_size, kind)
    return trapezoid_axis(-8.0, 8.0, cfg.grid_size, kind)


def _override_axis(model: ValidatedModel, a: int, lo, hi, cfg: GridConfig) -> Axis:
    kind = model.families[a].kind
    if model.families[a].discrete:
        return counting_axis(int(lo), int(hi), kind)
    return trapezoid_axis(float(lo), float(hi), cfg.grid_size, kind)


def extend_axis(axis: Axis, factor: int) -> Axis:
    """Grow an unbounded axis by ``factor`` while keeping its spacing.

    Axes on bounded supports are returned unchanged.
    """
    if factor == 1 or axis.kind in (Kind.BINARY, Kind.BINOMIAL, Kind.BETA):
        return axis
    if axis.discrete:
        return counting_axis(0, factor * (axis.hi + 1) - 1, axis.kind)
    n = factor * (axis.size - 1) + 1
    if axis.kind is Kind.EXPONENTIAL:
        return trapezoid_axis(axis.lo, axis.lo + factor * (axis.hi - axis.lo), n, axis.kind)
    mid = 0.5 * (axis.lo + axis.hi)
    half = 0.5 * (axis.hi - axis.lo) * factor
    return trapezoid_axis(mid - half, mid + half, n, axis.kind)


def _check_cap(space: DiscretizedSpace, cap: int) -> None:
    if space.total_size > cap:
        raise GridCapExceeded(
            f"grid has {space.total_size} states, above the cap of {cap}"
        )


def _coarse_axis(axis: Axis, size: int) -> Axis:
    """Same domain with about ``size`` points; weights absorb the stride."""
    if axis.size <= size:
        return axis
    if not axis.discrete:
        return trapezoid_axis(axis.lo, axis.hi, size, axis.kind)
    idx = np.unique(np.linspace(0, axis.size - 1, size).round().astype(int))
    wts = np.diff(np.concatenate([[0.0], 0.5 * (idx[1:] + idx[:-1]), [axis.size]]))
    return Axis(axis.points[idx], wts, True, axis.kind)


def _boundary_log_mass(model: ValidatedModel, space: DiscretizedSpace, a: int) -> float:
    """Kernel row/column mass at the open outer edge of axis ``a``, relative to the peak."""
    from .kernel import GridKernel, build_kernel

    gk = GridKernel.build(build_kernel(model), space)
    lw = np.log(space.block_weights)
    rows = gk.log_mass(lw, axis=1)
    cols = gk.log_mass(lw, axis=0)
    coord = space.block_points[..., a]
    edge = np.any(coord == space.axes[a].hi, axis=-1)
    if space.axes[a].kind is Kind.GAUSSIAN:
        edge |= np.any(coord == space.axes[a].lo, axis=-1)
    peak = max(rows.max(), cols.max())
    return float(max(rows[edge].max(), cols[edge].max()) - peak)


def build_space(model: ValidatedModel, config: GridConfig | None = None) -> DiscretizedSpace:
    """Discretize every node axis, then tensorize over nodes and time slices."""
    cfg = config or GridConfig()
    axes = []
    pending = []
    for a in range(model.p):
        if a in cfg.bounds:
            lo, hi = cfg.bounds[a]
            axes.append(_override_axis(model, a, lo, hi, cfg))
            continue
        ax = _analytic_axis(model, a, cfg)
        if ax is None:
            ax = _default_axis(model, a, cfg)
            pending.append(a)
        axes.append(ax)
    space = DiscretizedSpace(tuple(axes), model.d)
    _check_cap(space, cfg.grid_cap)

    # no analytic tail bound: extend geometrically until the kernel mass at the edge is negligible
    log_tol = math.log(cfg.truncation_tol)
    for a in pending:
        base = axes[a]
        for k in range(cfg.max_doublings + 1):
            axes[a] = extend_axis(base, 2**k)
            space = DiscretizedSpace(tuple(axes), model.d)
            _check_cap(space, cfg.grid_cap)
            # the edge test only needs the domain, so probe it at the base resolution
            probe = list(axes)
            probe[a] = _coarse_axis(axes[a], base.size)
            if _boundary_log_mass(model, DiscretizedSpace(tuple(probe), model.d), a) < log_tol:
                break
        else:
            raise UnboundedEnvelope(
                f"node {a + 1}: kernel mass at the domain edge did not fall below "
                f"{cfg.truncation_tol:g} within {cfg.max_doublings} doublings"
            )
    return space


def replace_config(config: GridConfig, **changes) -> GridConfig:
    return replace(config, **changes)


def fallback_space(model: ValidatedModel, config: GridConfig | None = None) -> DiscretizedSpace:
    """Best-effort grid for models whose tails cannot be certified.

    Nodes without a usable truncation rule get a fixed default domain; meant
    for diagnostics such as the divergence probe, not for accurate spectra.
    """
    cfg = config or GridConfig()
    axes = []
    for a in range(model.p):
        if a in cfg.bounds:
            axes.append(_override_axis(model, a, *cfg.bounds[a], cfg))
            continue
        try:
            ax = _analytic_axis(model, a, cfg)
        except UnboundedEnvelope:
            ax = None
        axes.append(ax if ax is not None else _default_axis(model, a, cfg))
    space = DiscretizedSpace(tuple(axes), model.d)
    _check_cap(space, cfg.grid_cap)
    return space

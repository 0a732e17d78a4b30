"""Stationary joint, marginal and transition densities, plus mixing and consistency diagnostics.

All densities are with respect to the product reference measure; on a grid
that measure is realized by the quadrature weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridCapExceeded, NormalizationFailure, UnsupportedOrder
from .kernel import build_kernel
from .quadrature import DiscretizedSpace
from .spectral import DENSE_LIMIT, SpectralResult

NORMALIZATION_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class DensityGrid:
    space: DiscretizedSpace
    log_values: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_values)

    def total_mass(self) -> float:
        return self.space.integrate(self.values)


def _states(spectral: SpectralResult, points) -> np.ndarray:
    k = spectral.op.kernel
    shape = (k.d, k.model.p) if k.d > 1 else (k.model.p,)
    return np.asarray(points, dtype=float).reshape((-1,) + shape)


def log_joint_density(model, spectral: SpectralResult, n: int, points) -> float:
    """``log p_{[1:n]}`` at a sequence of ``n`` consecutive states."""
    k = spectral.op.kernel
    xs = _states(spectral, points)
    if len(xs) != n or n < 1:
        raise ValueError(f"expected {n} states, got {len(xs)}")
    out = -(n - 1) * spectral.log_r
    out += float(spectral.log_v_at(xs[:1])[0]) + float(spectral.log_w_at(xs[-1:])[0])
    if n > 1:
        out += float(np.sum(k.log_R(xs[:-1], xs[1:])))
    return out


def joint_density(model, spectral: SpectralResult, n: int, points) -> float:
    """``p_{[1:n]}(x_1, …, x_n) = r^{-(n-1)} v(x_1) Π R(x_{t-1}, x_t) w(x_n)``."""
    return math.exp(log_joint_density(model, spectral, n, points))


def marginal_p1(spectral: SpectralResult) -> DensityGrid:
    """The stationary marginal ``p₁ = v·w`` on the grid."""
    grid = DensityGrid(spectral.op.space, np.log(spectral.v) + np.log(spectral.w))
    mass = grid.total_mass()
    if abs(mass - 1.0) > NORMALIZATION_TOL:
        raise NormalizationFailure(f"marginal integrates to {mass:.12g}; refine the grid")
    return grid


def log_transition_right(spectral: SpectralResult, x_prev, x) -> np.ndarray:
    k = spectral.op.kernel
    xp, xx = _states(spectral, x_prev), _states(spectral, x)
    return (
        k.log_R(xp, xx) - spectral.log_r + spectral.log_w_at(xx) - spectral.log_w_at(xp)
    )


def transition_right(spectral: SpectralResult, x_prev, x) -> np.ndarray:
    """``p(x_t | x_{t-1}) = r⁻¹ R(x_{t-1}, x_t) w(x_t) / w(x_{t-1})``."""
    return np.exp(log_transition_right(spectral, x_prev, x))


def log_transition_left(spectral: SpectralResult, x, x_next) -> np.ndarray:
    k = spectral.op.kernel
    xx, xn = _states(spectral, x), _states(spectral, x_next)
    return (
        k.log_R(xx, xn) - spectral.log_r + spectral.log_v_at(xx) - spectral.log_v_at(xn)
    )


def transition_left(spectral: SpectralResult, x, x_next) -> np.ndarray:
    """``p(x_{t-1} | x_t) = r⁻¹ R(x_{t-1}, x_t) v(x_{t-1}) / v(x_t)``."""
    return np.exp(log_transition_left(spectral, x, x_next))


# --- grid-level matrices -----------------------------------------------------


def _scaled(spectral: SpectralResult):
    """Kernel matrix divided by r, so that products of it need no rescaling."""
    op = spectral.op
    if op.size > DENSE_LIMIT:
        raise GridCapExceeded(f"grid of {op.size} states is too large for dense contraction")
    return op.dense_matrix() * (math.exp(op.log_scale) / spectral.r)


def transition_matrix(spectral: SpectralResult) -> np.ndarray:
    """Right transition density on the grid: ``Σ_j P[i, j] μ_j = 1``."""
    a = _scaled(spectral)
    return a * spectral.w[None, :] / spectral.w[:, None]


def lag_joint(spectral: SpectralResult, k: int) -> np.ndarray:
    """Joint density of ``(X_0, X_k)`` on the grid."""
    a = _scaled(spectral)
    wt = spectral.op.weights
    q = a
    for _ in range(k - 1):
        q = q @ (wt[:, None] * a)
    return spectral.v[:, None] * q * spectral.w[None, :]


def consistency_check(spectral: SpectralResult, n: int) -> float:
    """Largest deviation between an endpoint-marginalized ``p_{[1:n]}`` and ``p_{[1:n-1]}``.

    Marginalizing the last state of ``p_{[1:n]}`` yields
    ``p_{[1:n-1]} · (T* w / r) / w`` with the ratio evaluated at the new
    endpoint, so the deviation over all tuples factorizes into a positive
    path prefix times a residual.  The prefix maximum is found by a
    max-product recursion instead of enumerating every tuple; the first
    endpoint is handled symmetrically.
    """
    if not 2 <= n <= 5:
        raise ValueError("n must lie in 2..5")
    a = _scaled(spectral)
    v, w = spectral.v, spectral.w
    wt = spectral.op.weights
    w_hat = a @ (wt * w)
    v_hat = a.T @ (wt * v)

    prefix = v.copy()  # max over paths x_1..x_j of v(x_1) Π A, ending at j
    for _ in range(n - 2):
        prefix = np.max(prefix[:, None] * a, axis=0)
    suffix = w.copy()
    for _ in range(n - 2):
        suffix = np.max(a * suffix[None, :], axis=1)
    dev_last = np.max(prefix * np.abs(w_hat - w))
    dev_first = np.max(suffix * np.abs(v_hat - v))
    return float(max(dev_last, dev_first))


# --- mixing -----------------------------------------------------------------


def exact_beta(spectral: SpectralResult, k: int) -> float:
    """``β(k) = ½ ∬ |p_{0,k}(x, y) - p₁(x) p₁(y)| dμ dμ`` on the grid."""
    wt = spectral.op.weights
    p1 = spectral.v * spectral.w
    diff = lag_joint(spectral, k) - np.outer(p1, p1)
    return float(0.5 * np.sum(np.abs(diff) * np.outer(wt, wt)))


@dataclass(frozen=True)
class MixingCurve:
    n: np.ndarray
    exact: np.ndarray
    bound: np.ndarray
    ratio: float

    def to_rows(self):
        return [(int(k), float(e), float(b)) for k, e, b in zip(self.n, self.exact, self.bound)]


def mixing_bound_curve(spectral: SpectralResult, n_max: int) -> MixingCurve:
    """Calibrated geometric bound ``β(1) ρ^{n-1}`` with ``ρ = |λ₂| / r``.

    The constant comes from the exact lag-one coefficient on the grid rather
    than from a theoretical constant, so this is a calibrated decay curve.
    """
    ns = np.arange(1, n_max + 1)
    exact = np.array([exact_beta(spectral, int(k)) for k in ns])
    rho = spectral.ratio
    bound = exact[0] * rho ** (ns - 1.0)
    return MixingCurve(ns, exact, bound, rho)


def _codes(values: np.ndarray, discrete: bool, bins: int) -> np.ndarray:
    if discrete:
        _, inv = np.unique(values, return_inverse=True)
        return inv.reshape(values.shape)
    edges = np.quantile(values, np.linspace(0, 1, bins + 1)[1:-1])
    return np.searchsorted(edges, values, side="right")


def empirical_beta(paths, n: int, bins: int = 8, discrete=None) -> float:
    """Plug-in ``β`` between states ``n`` steps apart, pooled over paths and times.

    ``paths`` has shape ``(draws, T)`` or ``(draws, T, p)``.  Continuous
    coordinates are cut into ``bins`` quantile bins; integer-valued ones are
    used as they are unless ``discrete`` says otherwise.
    """
    x = np.asarray(paths, dtype=float)
    if x.ndim == 2:
        x = x[..., None]
    p = x.shape[-1]
    if discrete is None:
        discrete = [bool(np.all(x[..., a] == np.round(x[..., a]))) for a in range(p)]
    elif isinstance(discrete, bool):
        discrete = [discrete] * p
    code = np.zeros(x.shape[:-1], dtype=np.int64)
    for a in range(p):
        c = _codes(x[..., a], discrete[a], bins)
        code = code * (int(c.max()) + 1) + c
    _, code = np.unique(code, return_inverse=True)
    code = code.reshape(x.shape[:-1])
    m = int(code.max()) + 1
    first = code[:, :-n].ravel()
    second = code[:, n:].ravel()
    joint = np.bincount(first * m + second, minlength=m * m).reshape(m, m) / len(first)
    return float(0.5 * np.abs(joint - np.outer(joint.sum(1), joint.sum(0))).sum())


# --- simulation accuracy -----------------------------------------------------


def tv_decay(model, spectral: SpectralResult, n: int, m_list) -> list[float]:
    """Total variation between the padded-sampler target and the stationary joint.

    The sampler's window marginal on times ``0..n+1`` has the form
    ``a(x_0) Π R b(x_{n+1})`` with ``a = T^{m-1} f``, ``b = T*^{m-1} f`` and
    ``f = G^{1/2}``, while the stationary joint uses ``v`` and ``w`` at the
    ends.  The shared positive interior product is contracted into an
    endpoint matrix, which makes the total variation exact on the grid.
    """
    op = spectral.op
    a_mat = _scaled(spectral)
    wt = op.weights
    q = a_mat
    for _ in range(n):
        q = q @ (wt[:, None] * a_mat)
    qw = q * np.outer(wt, wt)

    f = np.exp(0.5 * (op.grid.log_g - op.grid.log_g.max()))
    p_end = np.outer(spectral.v, spectral.w)
    p_end /= np.sum(qw * p_end)
    out = []
    for m in m_list:
        if m < 1:
            raise ValueError("pad width must be at least 1")
        left, right = f.copy(), f.copy()
        for _ in range(m - 1):
            left = op.apply(left)
            left /= left.max()
            right = op.apply_adjoint(right)
            right /= right.max()
        h_end = np.outer(left, right)
        h_end /= np.sum(qw * h_end)
        out.append(float(0.5 * np.sum(qw * np.abs(h_end - p_end))))
    return out


# --- reflective boundary -----------------------------------------------------


def reflective_log_density(model, n: int, points) -> float:
    """Unnormalized log density of the finite reflective-boundary window.

    Every site keeps its full single-time term; couplings are summed over
    all pairs of sites that both lie inside the window.
    """
    k = build_kernel(model, d=1)
    xs = np.asarray(points, dtype=float).reshape(n, model.p)
    s = model.stats(xs)
    out = float(np.sum(k.log_G(xs)))
    for lag in range(1, model.d + 1):
        if lag < n:
            out += float(np.einsum("ti,ij,tj->", s[:-lag], model.psi[lag], s[lag:]))
    return out


def reflective_density(model, n: int, points) -> float:
    return math.exp(reflective_log_density(model, n, points))


@dataclass(frozen=True)
class ReflectiveMarginals:
    masses: np.ndarray  # (n, grid) single-time marginal densities
    means: np.ndarray  # (n, p)
    variances: np.ndarray  # (n, p)


def reflective_nonstationarity_demo(model, n: int, space: DiscretizedSpace) -> ReflectiveMarginals:
    """Normalize the reflective window on a grid and report per-time marginals.

    The window density equals ``f(x_1) Π R(x_t, x_{t+1}) f(x_n)`` with
    ``f = G^{1/2}``, so forward/backward recursions give every marginal.
    """
    if model.d != 1:
        raise UnsupportedOrder("the reflective-boundary demo covers first-order models")
    from .spectral import build_operator

    op = build_operator(model, space)
    wt = op.weights
    a = op.dense_matrix()
    f = np.exp(0.5 * (op.grid.log_g - op.grid.log_g.max()))
    fwd = [f]
    for _ in range(n - 1):
        nxt = a.T @ (wt * fwd[-1])
        fwd.append(nxt / nxt.max())
    bwd = [f]
    for _ in range(n - 1):
        nxt = a @ (wt * bwd[-1])
        bwd.append(nxt / nxt.max())
    bwd = bwd[::-1]
    masses = np.empty((n, op.size))
    for t in range(n):
        m = fwd[t] * bwd[t]
        masses[t] = m / np.sum(m * wt)
    pts = space.points
    means = (masses * wt) @ pts
    second = (masses * wt) @ (pts**2)
    return ReflectiveMarginals(masses, means, second - means**2)

"""Dominant eigentriple of the discretized integral operator and its adjoint.

On a quadrature grid with points ``x_i`` and weights ``w_i`` the operator
acts as ``(T f)_j = Σ_i R(x_i, x_j) f_i w_i`` and its adjoint as
``(T* f)_j = Σ_i R(x_j, x_i) f_i w_i``.  Inner products use the same weights.
The kernel matrix is stored scaled by ``exp(-log_scale)`` so that its largest
entry is one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import NonPositiveIterate, NoConvergence, OracleSizeExceeded
from .kernel import GridKernel, InteractionKernel, build_kernel, h_factors, log_g_from_stats
from .quadrature import DiscretizedSpace

DENSE_LIMIT = 4096
ORACLE_LIMIT = 4096


@dataclass(frozen=True, eq=False)
class DiscretizedOperator:
    space: DiscretizedSpace
    kernel: InteractionKernel
    grid: GridKernel
    weights: np.ndarray
    log_scale: float
    matrix: np.ndarray | None  # scaled R[i, j] = R(x_i, x_j) exp(-log_scale), when dense

    @classmethod
    def build(cls, kernel: InteractionKernel, space: DiscretizedSpace) -> "DiscretizedOperator":
        grid = GridKernel.build(kernel, space)
        weights = space.block_weights
        if grid.size <= DENSE_LIMIT:
            log_r = grid.log_matrix()
            log_scale = float(log_r.max())
            matrix = np.exp(log_r - log_scale)
        else:
            log_scale = max(
                float(grid.log_block(rows=slice(s, s + 1024)).max())
                for s in range(0, grid.size, 1024)
            )
            matrix = None
        return cls(space, kernel, grid, weights, log_scale, matrix)

    @property
    def size(self) -> int:
        return self.grid.size

    def _blocks(self):
        for start in range(0, self.size, 1024):
            sl = slice(start, min(start + 1024, self.size))
            yield sl, np.exp(self.grid.log_block(rows=sl) - self.log_scale)

    def apply(self, f: np.ndarray) -> np.ndarray:
        """Scaled ``T f``."""
        u = self.weights * f
        if self.matrix is not None:
            return self.matrix.T @ u
        out = np.zeros(self.size)
        for sl, blk in self._blocks():
            out += blk.T @ u[sl]
        return out

    def apply_adjoint(self, f: np.ndarray) -> np.ndarray:
        """Scaled ``T* f``."""
        u = self.weights * f
        if self.matrix is not None:
            return self.matrix @ u
        out = np.empty(self.size)
        for sl, blk in self._blocks():
            out[sl] = blk @ u
        return out

    def inner(self, f, g) -> float:
        return float(np.sum(f * g * self.weights))

    def norm(self, f) -> float:
        return math.sqrt(self.inner(f, f))

    def dense_matrix(self) -> np.ndarray:
        """Scaled kernel matrix, materialized if necessary."""
        if self.matrix is not None:
            return self.matrix
        return np.exp(self.grid.log_matrix() - self.log_scale)

    def symmetrized(self) -> np.ndarray:
        """Scaled ``Ã = W^{1/2} Rᵀ W^{1/2}``, similar to the weighted action of ``T``."""
        sw = np.sqrt(self.weights)
        return sw[:, None] * self.dense_matrix().T * sw[None, :]

    def log_kernel_to(self, ys) -> np.ndarray:
        """``log R(x_i, y_j)`` for grid points ``x_i`` and arbitrary block states ``y_j``."""
        ys, sy, gy = self._prep(ys)
        _, right = h_factors(self.kernel.model, self.kernel.d, sy, sy)
        return 0.5 * self.grid.log_g[:, None] + self.grid.left @ right.T + 0.5 * gy[None, :]

    def log_kernel_from(self, ys) -> np.ndarray:
        """``log R(y_j, x_i)`` arranged as ``(grid, ys)``."""
        ys, sy, gy = self._prep(ys)
        left, _ = h_factors(self.kernel.model, self.kernel.d, sy, sy)
        return 0.5 * self.grid.log_g[:, None] + self.grid.right @ left.T + 0.5 * gy[None, :]

    def _prep(self, ys):
        d, p = self.kernel.d, self.kernel.model.p
        ys = np.asarray(ys, dtype=float).reshape(-1, d, p)
        sy = self.kernel.model.stats(ys)
        gy = log_g_from_stats(self.kernel.model, d, sy, self.kernel.model.log_base(ys))
        return ys, sy, gy


def build_operator(model, space: DiscretizedSpace, kernel: InteractionKernel | None = None):
    return DiscretizedOperator.build(kernel or build_kernel(model), space)


@dataclass(frozen=True, eq=False)
class SpectralResult:
    r: float
    v: np.ndarray
    w: np.ndarray
    lambda2_abs: float
    iterations: int
    residual: float
    op: DiscretizedOperator = field(repr=False)

    @property
    def log_r(self) -> float:
        return math.log(self.r)

    @property
    def ratio(self) -> float:
        """Subdominant ratio ``|λ₂| / r``."""
        return self.lambda2_abs / self.r

    def log_v_at(self, ys) -> np.ndarray:
        """Nyström extension ``v(y) = r⁻¹ Σ_i R(x_i, y) v_i w_i`` in log form."""
        lk = self.op.log_kernel_to(ys)
        lv = np.log(self.v) + np.log(self.op.weights)
        return logsumexp(lk + lv[:, None], axis=0) - self.log_r

    def log_w_at(self, ys) -> np.ndarray:
        """Nyström extension ``w(y) = r⁻¹ Σ_i R(y, x_i) w_i μ_i`` in log form."""
        lk = self.op.log_kernel_from(ys)
        lw = np.log(self.w) + np.log(self.op.weights)
        return logsumexp(lk + lw[:, None], axis=0) - self.log_r

    def to_json(self) -> dict:
        space = self.op.space
        return {
            "r": self.r,
            "lambda2_abs": self.lambda2_abs,
            "iterations": self.iterations,
            "residual": self.residual,
            "grid_meta": {
                "slices": space.slices,
                "total_size": space.total_size,
                "axes": [
                    {"kind": ax.kind.value, "size": ax.size, "lo": ax.lo, "hi": ax.hi}
                    for ax in space.axes
                ],
            },
        }


def _dominant(apply, op: DiscretizedOperator, tol: float, max_iter: int):
    f = np.ones(op.size)
    f /= op.norm(f)
    residual = math.inf
    for it in range(1, max_iter + 1):
        g = apply(f)
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise NonPositiveIterate(
                f"iterate lost strict positivity at step {it}; the grid or truncation is inadequate"
            )
        lam = op.inner(g, f)
        residual = op.norm(g - lam * f) / lam
        f = g / op.norm(g)
        if residual <= tol:
            g = apply(f)
            lam = op.inner(g, f)
            return f, lam, op.norm(g - lam * f) / lam, it
    raise NoConvergence(max_iter, residual)


def power_iterate(
    op: DiscretizedOperator,
    tol: float = 1e-10,
    max_iter: int = 10000,
    probes: int = 8,
) -> SpectralResult:
    """Dominant eigenvalue ``r`` with positive eigenfunctions ``v`` (of T) and ``w`` (of T*).

    ``v`` has unit weighted norm and ``w`` is scaled so that ``⟨v, w⟩ = 1``.
    """
    v, lam, res_v, it_v = _dominant(op.apply, op, tol, max_iter)
    vstar, _, res_w, it_w = _dominant(op.apply_adjoint, op, tol, max_iter)
    w = vstar / op.inner(v, vstar)
    scale = math.exp(op.log_scale)
    result = SpectralResult(
        r=lam * scale,
        v=v,
        w=w,
        lambda2_abs=0.0,
        iterations=max(it_v, it_w),
        residual=max(res_v, res_w),
        op=op,
    )
    if probes:
        object.__setattr__(result, "lambda2_abs", subdominant_abs(op, result, probes))
    return result


def deflate(op: DiscretizedOperator, result: SpectralResult, f: np.ndarray) -> np.ndarray:
    """``M f = T f - r ⟨f, w⟩ v`` in scaled units."""
    r_scaled = result.r / math.exp(op.log_scale)
    return op.apply(f) - r_scaled * op.inner(f, result.w) * result.v


def oblique_projection(op: DiscretizedOperator, result: SpectralResult, f: np.ndarray) -> np.ndarray:
    """``Q f = f - ⟨f, w⟩ v``."""
    return f - op.inner(f, result.w) * result.v


def subdominant_abs(
    op: DiscretizedOperator,
    result: SpectralResult,
    probes: int = 8,
    steps: int = 30,
    seed: int = 0,
) -> float:
    """Estimate ``|λ₂|`` from the growth of the deflated operator on random probes.

    Each probe is pushed through ``M`` for ``steps`` normalized steps; the
    geometric mean of the per-step growth over the second half is its
    estimate, and the median over probes is returned.  Returns 0 when the
    deflated iterates collapse to rounding level (rank-one kernels).
    """
    rng = np.random.default_rng(seed)
    r_scaled = result.r / math.exp(op.log_scale)
    estimates = []
    for _ in range(probes):
        g = rng.standard_normal(op.size)
        g /= op.norm(g)
        logs = []
        collapsed = False
        for step in range(1, steps + 1):
            h = deflate(op, result, g)
            ratio = op.norm(h) / r_scaled
            if not ratio > 1e-12:
                collapsed = True
                break
            g = h / (ratio * r_scaled)
            if step > steps // 2:
                logs.append(math.log(ratio))
        estimates.append(0.0 if collapsed else math.exp(np.mean(logs)))
    return float(np.median(estimates)) * result.r


@dataclass(frozen=True, eq=False)
class DenseSpectrum:
    eigenvalues: np.ndarray  # complex, sorted by decreasing magnitude
    r: float
    v: np.ndarray
    w: np.ndarray

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.eigenvalues)


def dense_oracle(op: DiscretizedOperator) -> DenseSpectrum:
    """Full eigendecomposition of the symmetrized matrix, for cross-checking."""
    if op.size > ORACLE_LIMIT:
        raise OracleSizeExceeded(f"grid has {op.size} points, oracle limit is {ORACLE_LIMIT}")
    a = op.symmetrized()
    sw = np.sqrt(op.weights)
    scale = math.exp(op.log_scale)
    if np.max(np.abs(a - a.T)) <= 1e-14 * np.max(np.abs(a)):
        vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
        order = np.argsort(-np.abs(vals))
        vals = vals[order].astype(complex)
        u = vecs[:, order[0]]
        u_left = u
    else:
        vals, vecs = np.linalg.eig(a)
        order = np.argsort(-np.abs(vals))
        vals = vals[order]
        u = np.real(vecs[:, order[0]])
        lvals, lvecs = np.linalg.eig(a.T)
        u_left = np.real(lvecs[:, np.argmax(np.abs(lvals))])
    u = u * np.sign(u.sum())
    u_left = u_left * np.sign(u_left.sum())
    v = u / sw
    v /= op.norm(v)
    vstar = u_left / sw
    w = vstar / op.inner(v, vstar)
    return DenseSpectrum(eigenvalues=vals * scale, r=float(np.real(vals[0])) * scale, v=v, w=w)

"""Markov order ``d > 1``: block state space, block kernel and block-level stationary joints.

A block is ``d`` consecutive times.  The block kernel is the ordinary
interaction kernel on blocks, so the spectral and density machinery applies
unchanged; this module adds the bookkeeping that maps blocks back to single
times and the checks that the relabeled scalar process is stationary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .density import _scaled, joint_density
from .errors import UnsupportedOrder
from .kernel import InteractionKernel, build_kernel
from .model import ModelSpec, ValidatedModel
from .quadrature import DiscretizedSpace, GridConfig, build_space
from .spectral import SpectralResult, build_operator, power_iterate

MAX_ORDER = 3


@dataclass(frozen=True, eq=False)
class BlockKernel:
    kernel: InteractionKernel
    space: DiscretizedSpace

    @property
    def model(self) -> ValidatedModel:
        return self.kernel.model

    @property
    def d(self) -> int:
        return self.kernel.d

    def log_R(self, x, y):
        return self.kernel.log_R(x, y)


def build_block_kernel(
    model: ValidatedModel, config: GridConfig | None = None, max_order: int = MAX_ORDER
) -> BlockKernel:
    """Block kernel over ``d`` time slices together with its block grid."""
    if model.d < 2:
        raise UnsupportedOrder("block kernels are for models with d >= 2")
    if model.d > max_order:
        raise UnsupportedOrder(f"d = {model.d} exceeds the configured maximum {max_order}")
    space = build_space(model, config)
    return BlockKernel(build_kernel(model), space)


def block_spectrum(bk: BlockKernel, tol: float = 1e-10, max_iter: int = 10000) -> SpectralResult:
    return power_iterate(build_operator(bk.model, bk.space, bk.kernel), tol=tol, max_iter=max_iter)


def block_joint_density(bk: BlockKernel, spectral: SpectralResult, n_blocks: int, points) -> float:
    """Joint density of ``n_blocks · d`` consecutive single-time states."""
    xs = np.asarray(points, dtype=float).reshape(n_blocks, bk.d, bk.model.p)
    return joint_density(bk.model, spectral, n_blocks, xs)


def single_time_marginals(spectral: SpectralResult, n_blocks: int) -> np.ndarray:
    """Single-time marginal densities for every time in a window of ``n_blocks`` blocks.

    Returns shape ``(n_blocks · d, size)`` on the single-time grid.
    """
    space = spectral.op.space
    d, n = space.slices, space.size
    a = _scaled(spectral)
    wt = spectral.op.weights
    fwd = [spectral.v]
    for _ in range(n_blocks - 1):
        fwd.append(a.T @ (wt * fwd[-1]))
    bwd = [spectral.w]
    for _ in range(n_blocks - 1):
        bwd.append(a @ (wt * bwd[-1]))
    bwd = bwd[::-1]
    w1 = space.weights
    out = []
    for k in range(n_blocks):
        block = (fwd[k] * bwd[k]).reshape((n,) * d)
        for t in range(d):
            m = block
            for ax in reversed(range(d)):
                if ax != t:
                    m = np.tensordot(m, w1, axes=([ax], [0]))
            out.append(m)
    return np.array(out)


def shift_consistency_check(bk: BlockKernel, spectral: SpectralResult, n_blocks: int) -> float:
    """Max deviation between single-time marginals across all time offsets."""
    marg = single_time_marginals(spectral, n_blocks)
    return float(np.max(np.abs(marg - marg[0][None, :])))


def embed_first_order(spec: ModelSpec, d: int = 2) -> ModelSpec:
    """The same first-order model declared with Markov order ``d`` (higher-lag blocks zero)."""
    return ModelSpec(p=spec.p, d=d, families=spec.families, theta=spec.theta, phi=dict(spec.phi))


def block_ratio_to_first_order(r_block: float, r_one: float, d: int) -> float:
    """``r_block / r₁^d``, equal to one when the higher-lag blocks vanish."""
    return math.exp(math.log(r_block) - d * math.log(r_one))

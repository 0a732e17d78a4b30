"""Interaction kernel ``R = G^{1/2} H G^{1/2}``, Hilbert–Schmidt checks and clique factorization.

States of a Markov-order-``d`` kernel are blocks of ``d`` consecutive times,
arrays of shape ``(..., d, p)``.  For ``d = 1`` states are plain ``(..., p)``
arrays.  Everything is computed in log space.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy.special import logsumexp

from .errors import UnsupportedOrder
from .families import Kind, base_measure
from .model import ValidatedModel, ci_graph, coupling_terms, natural_parameter_bounds

_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class InteractionKernel:
    model: ValidatedModel
    d: int

    def _block(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.model.p
        if self.d == 1:
            x = x[..., None, :]
        if x.shape[-2:] != (self.d, p):
            raise ValueError(f"states must have trailing shape ({self.d}, {p})")
        return x

    def _stats(self, x):
        x = self._block(x)
        return self.model.stats(x), self.model.log_base(x)

    def log_G(self, x) -> np.ndarray:
        s, c = self._stats(x)
        return log_g_from_stats(self.model, self.d, s, c)

    def log_H(self, x, y) -> np.ndarray:
        sx, _ = self._stats(x)
        sy, _ = self._stats(y)
        return np.einsum("...m,...m->...", *h_factors(self.model, self.d, sx, sy))

    def log_R(self, x, y) -> np.ndarray:
        return 0.5 * self.log_G(x) + self.log_H(x, y) + 0.5 * self.log_G(y)

    def __call__(self, x, y) -> np.ndarray:
        return np.exp(self.log_R(x, y))


def build_kernel(model: ValidatedModel, d: int | None = None) -> InteractionKernel:
    return InteractionKernel(model, model.d if d is None else d)


def log_kernel_eval(k: InteractionKernel, x, y) -> float:
    return k.log_R(x, y)


def kernel_eval(k: InteractionKernel, x, y) -> float:
    return np.exp(k.log_R(x, y))


def log_g_from_stats(model: ValidatedModel, d: int, s: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``log G`` from block statistics ``s`` (..., d, K) and base terms ``c`` (..., d)."""
    theta = model.theta_vec
    psi0 = model.psi[0]
    out = s @ theta + c + 0.5 * np.einsum("...i,ij,...j->...", s, psi0, s)
    out = out.sum(axis=-1)
    for t in range(d):
        for lag in range(1, d - t):
            out = out + np.einsum("...i,ij,...j->...", s[..., t, :], model.psi[lag], s[..., t + lag, :])
    return out


def h_factors(model: ValidatedModel, d: int, sx: np.ndarray, sy: np.ndarray):
    """Factors ``A, B`` with ``log H(x, y) = A(x) · B(y)``.

    Slice ``t`` of ``x`` interacts with slice ``t + lag - d`` of ``y`` for
    every ``lag`` that reaches past the end of the block.
    """
    left, right = [], []
    for t in range(d):
        for lag in range(d - t, d + 1):
            left.append(sx[..., t, :] @ model.psi[lag])
            right.append(sy[..., t + lag - d, :])
    return np.concatenate(left, axis=-1), np.concatenate(right, axis=-1)


@dataclass(frozen=True, eq=False)
class GridKernel:
    """Kernel tabulated on a discretized block space in factored log form.

    ``log R[i, j] = g[i]/2 + A[i]·B[j] + g[j]/2``; the full matrix is only
    materialized on request.
    """

    log_g: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @classmethod
    def build(cls, k: InteractionKernel, space) -> "GridKernel":
        pts = space.block_points
        s = k.model.stats(pts)
        c = k.model.log_base(pts)
        log_g = log_g_from_stats(k.model, k.d, s, c)
        left, right = h_factors(k.model, k.d, s, s)
        return cls(log_g, left, right)

    @property
    def size(self) -> int:
        return len(self.log_g)

    def log_block(self, rows=slice(None), cols=slice(None)) -> np.ndarray:
        return (
            0.5 * self.log_g[rows, None]
            + self.left[rows] @ self.right[cols].T
            + 0.5 * self.log_g[None, cols]
        )

    def log_matrix(self) -> np.ndarray:
        return self.log_block()

    def log_mass(self, log_weights: np.ndarray, axis: int) -> np.ndarray:
        """``log Σ_j R[i, j] w_j`` (axis=1) or ``log Σ_i R[i, j] w_i`` (axis=0)."""
        n = self.size
        out = np.empty(n)
        for start in range(0, n, _CHUNK):
            sl = slice(start, min(start + _CHUNK, n))
            if axis == 1:
                blk = self.log_block(rows=sl) + log_weights[None, :]
            else:
                blk = self.log_block(cols=sl) + log_weights[:, None]
            out[sl] = logsumexp(blk, axis=axis)
        return out

    def log_hs_sq(self, log_weights: np.ndarray) -> float:
        """``log Σ_ij R_ij² w_i w_j``."""
        n = self.size
        parts = []
        for start in range(0, n, _CHUNK):
            sl = slice(start, min(start + _CHUNK, n))
            blk = 2.0 * self.log_block(rows=sl) + log_weights[sl, None] + log_weights[None, :]
            parts.append(logsumexp(blk))
        return float(logsumexp(parts))


# --- Hilbert-Schmidt condition ------------------------------------------------


@dataclass(frozen=True)
class HSNorm:
    value: float
    not_hilbert_schmidt: bool
    history: tuple = ()  # (domain factor, estimate) per probe step


def _probe_space(space, factor: int, budget: int):
    from .quadrature import DiscretizedSpace, extend_axis, trapezoid_axis

    axes = [extend_axis(ax, factor) for ax in space.axes]
    total = np.prod([ax.size for ax in axes]) ** space.slices
    if total > budget:
        # coarsen the continuous axes evenly to stay within budget
        cont = [i for i, ax in enumerate(axes) if not ax.discrete and ax.size > space.axes[i].size]
        if cont:
            fixed = total / np.prod([axes[i].size for i in cont]) ** space.slices
            per_axis = (budget / fixed) ** (1.0 / (len(cont) * space.slices))
            for i in cont:
                n = max(16, int(per_axis))
                axes[i] = trapezoid_axis(axes[i].lo, axes[i].hi, n, axes[i].kind)
    return DiscretizedSpace(tuple(axes), space.slices)


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def hs_norm_sq(
    k: InteractionKernel,
    space,
    max_doublings: int = 8,
    growth: float = 0.10,
    successive: int = 3,
    budget: int = 8192,
) -> HSNorm:
    """Quadrature estimate of ``∬ R² dμ dμ`` plus a domain-doubling divergence probe.

    The probe flags the kernel when the estimate grows by more than
    ``growth`` on ``successive`` consecutive doublings of the unbounded axes.
    """
    gk = GridKernel.build(k, space)
    value = _exp(gk.log_hs_sq(np.log(space.block_weights)))
    history = [(1, value)]
    extendable = any(
        ax.kind in (Kind.GAUSSIAN, Kind.POISSON, Kind.EXPONENTIAL) for ax in space.axes
    )
    # an estimate that overflows on a finite grid is already conclusive
    flagged = not math.isfinite(value)
    if extendable and not flagged:
        streak = 0
        prev = value
        for step in range(1, max_doublings + 1):
            probe = _probe_space(space, 2**step, max(budget, space.total_size))
            gk = GridKernel.build(k, probe)
            est = _exp(gk.log_hs_sq(np.log(probe.block_weights)))
            history.append((2**step, est))
            if not math.isfinite(est):
                flagged = True
                break
            rel = est / prev - 1.0 if prev > 0 else math.inf
            streak = streak + 1 if rel > growth else 0
            if streak >= successive:
                flagged = True
                break
            if abs(rel) < 1e-9:
                break
            prev = est
    return HSNorm(value=value, not_hilbert_schmidt=flagged, history=tuple(history))


class HSStatus(str, enum.Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class HSScreening:
    status: HSStatus
    reasons: tuple = field(default_factory=tuple)

    def to_json(self) -> dict:
        return {"status": self.status.value, "reasons": list(self.reasons)}


def _one_signed_unbounded(lo: float, hi: float) -> bool:
    return math.isfinite(lo) != math.isfinite(hi)


def _screen_node(model: ValidatedModel, a: int) -> tuple[HSStatus, str]:
    fam = model.families[a]
    kind = fam.kind
    name = f"node {a + 1} ({kind.value})"
    if kind in (Kind.BINARY, Kind.BINOMIAL):
        return HSStatus.SATISFIED, ""
    bounds = natural_parameter_bounds(model, a)
    terms = list(coupling_terms(model, a))

    def blocked_by_two_sided(stat_i):
        return any(
            i == stat_i and not _one_signed_unbounded(*model.families[b].stat_ranges()[j])
            and not all(map(math.isfinite, model.families[b].stat_ranges()[j]))
            for i, b, j, c in terms
        )

    if kind is Kind.POISSON:
        if math.isfinite(bounds[0][1]):
            return HSStatus.SATISFIED, ""
        if blocked_by_two_sided(0):
            return HSStatus.UNKNOWN, f"{name}: coupled to a two-sided unbounded statistic"
        return HSStatus.VIOLATED, f"{name}: a coupling can push the log-rate to +inf"
    if kind is Kind.EXPONENTIAL:
        lo = bounds[0][0]
        if lo > 0:
            return HSStatus.SATISFIED, ""
        if not math.isfinite(lo) and blocked_by_two_sided(0):
            return HSStatus.UNKNOWN, f"{name}: coupled to a two-sided unbounded statistic"
        return HSStatus.VIOLATED, f"{name}: conditional rate can reach {lo:g}"
    if kind is Kind.BETA:
        if bounds[0][0] > -1 and bounds[1][0] > -1:
            return HSStatus.SATISFIED, ""
        if blocked_by_two_sided(0) or blocked_by_two_sided(1):
            return HSStatus.UNKNOWN, f"{name}: coupled to a two-sided unbounded statistic"
        return HSStatus.VIOLATED, f"{name}: a shape parameter can drop to zero or below"
    # Gaussian: precision must dominate the total x-x coupling strength
    prec_lo = bounds[0][0]
    kappa = 0.0
    for i, b, j, c in terms:
        fam_b = model.families[b]
        lo, hi = fam_b.stat_ranges()[j]
        if i == 1 and fam_b.kind is Kind.GAUSSIAN and j == 1:
            kappa += abs(c)
        elif i == 1 and not (math.isfinite(lo) and math.isfinite(hi)):
            return HSStatus.UNKNOWN, f"{name}: mean coupled to an unbounded statistic"
    if not math.isfinite(prec_lo):
        if blocked_by_two_sided(0):
            return HSStatus.UNKNOWN, f"{name}: precision coupled to a two-sided unbounded statistic"
        return HSStatus.VIOLATED, f"{name}: conditional precision is unbounded below"
    if prec_lo - kappa > 0:
        return HSStatus.SATISFIED, ""
    return HSStatus.VIOLATED, (
        f"{name}: precision {prec_lo:g} does not dominate coupling strength {kappa:g}"
    )


def sufficient_hs_check(model: ValidatedModel) -> HSScreening:
    """Conservative per-family analytic sufficient conditions for square integrability of R."""
    results = [_screen_node(model, a) for a in range(model.p)]
    for status in (HSStatus.VIOLATED, HSStatus.UNKNOWN):
        reasons = tuple(msg for st, msg in results if st is status)
        if reasons:
            return HSScreening(status, reasons)
    return HSScreening(HSStatus.SATISFIED)


# --- clique factorization ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class CliqueKernel:
    """One factor ``R_D`` of the kernel, acting on the nodes in ``nodes``."""

    model: ValidatedModel
    nodes: tuple
    node_weight: dict  # a -> 1/p_a
    edge_weight: dict  # (a, b) -> 1/p_ab

    def log_eval(self, x, y) -> np.ndarray:
        """``log R_D``; ``x`` and ``y`` are full states of shape ``(..., p)``."""
        m = self.model
        sx, sy = m.stats(x), m.stats(y)
        out = 0.0
        for a in self.nodes:
            fam = m.families[a]
            sl = m.node_slice(a)
            th = m.spec.theta[a]
            node_x = sx[..., sl] @ th + base_measure(fam, np.asarray(x)[..., a])
            node_y = sy[..., sl] @ th + base_measure(fam, np.asarray(y)[..., a])
            self_lag = np.einsum("...i,ij,...j->...", sx[..., sl], m.spec.block(1, a, a), sy[..., sl])
            out = out + self.node_weight[a] * (0.5 * node_x + 0.5 * node_y + self_lag)
        for a in self.nodes:
            for b in self.nodes:
                if a == b:
                    continue
                sa, sb = m.node_slice(a), m.node_slice(b)
                phi0 = m.spec.block(0, a, b)
                phi1 = m.spec.block(1, a, b)
                term = (
                    0.25 * np.einsum("...i,ij,...j->...", sx[..., sa], phi0, sx[..., sb])
                    + 0.25 * np.einsum("...i,ij,...j->...", sy[..., sa], phi0, sy[..., sb])
                    + np.einsum("...i,ij,...j->...", sx[..., sa], phi1, sy[..., sb])
                )
                out = out + self.edge_weight[tuple(sorted((a, b)))] * term
        return out


def clique_factorization(k: InteractionKernel) -> list[CliqueKernel]:
    """Split ``log R`` over the maximal cliques of the conditional-independence graph.

    Node terms are shared equally among the cliques containing the node and
    edge terms among the cliques containing the edge.
    """
    if k.d != 1:
        raise UnsupportedOrder("clique factorization is defined for first-order kernels only")
    model = k.model
    graph = nx.Graph()
    graph.add_nodes_from(range(model.p))
    graph.add_edges_from(ci_graph(model).edges)
    cliques = sorted(tuple(sorted(c)) for c in nx.find_cliques(graph))
    n_node = {a: sum(a in c for c in cliques) for a in range(model.p)}
    n_edge = {}
    for c in cliques:
        for i, a in enumerate(c):
            for b in c[i + 1:]:
                n_edge[(a, b)] = n_edge.get((a, b), 0) + 1
    return [
        CliqueKernel(
            model,
            c,
            {a: 1.0 / n_node[a] for a in c},
            {e: 1.0 / n for e, n in n_edge.items() if e[0] in c and e[1] in c},
        )
        for c in cliques
    ]


def factorization_residual(k: InteractionKernel, samples) -> float:
    """Max ``|log R(x, y) - Σ_D log R_D(x_D, y_D)|`` over sample pairs ``(xs, ys)``."""
    xs, ys = (np.asarray(s, dtype=float) for s in samples)
    direct = k.log_R(xs, ys)
    total = sum(c.log_eval(xs, ys) for c in clique_factorization(k))
    return float(np.max(np.abs(direct - total)))

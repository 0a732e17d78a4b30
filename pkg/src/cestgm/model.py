"""Model parameterization, compatibility validation and conditional-independence graphs.

Nodes are 0-indexed in the Python API.  The JSON model-spec format and all
human-facing output (reports, DOT files) use 1-indexed nodes.

A coupling block ``phi[(lag, a, b)]`` is the ``K_a × K_b`` matrix multiplying
``s(x_{t+lag}^{(b)})`` inside the natural parameter of node ``a`` at time ``t``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateEntry,
    SelfCouplingAtLagZero,
    SpecFormatError,
    SymmetryViolation,
)
from .families import NodeFamily, base_measure, gaussian, suff_stats

_SYM_ATOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelSpec:
    p: int
    d: int
    families: tuple
    theta: tuple
    phi: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "theta", tuple(_frozen(np.atleast_1d(t)) for t in self.theta))
        phi = {}
        for key, mat in dict(self.phi).items():
            lag, a, b = (int(k) for k in key)
            phi[(lag, a, b)] = _frozen(np.atleast_2d(mat))
        object.__setattr__(self, "phi", MappingProxyType(phi))

    @property
    def k_stats(self) -> tuple:
        return tuple(f.k_stats for f in self.families)

    def block(self, lag: int, a: int, b: int) -> np.ndarray:
        """Coupling block, zero when absent."""
        mat = self.phi.get((lag, a, b))
        if mat is None:
            return np.zeros((self.families[a].k_stats, self.families[b].k_stats))
        return np.asarray(mat)

    def to_json(self) -> dict:
        entries = [
            {"lag": lag, "a": a + 1, "b": b + 1, "matrix": np.asarray(m).tolist()}
            for (lag, a, b), m in sorted(self.phi.items())
        ]
        return {
            "p": self.p,
            "d": self.d,
            "families": [f.to_json() for f in self.families],
            "theta": [np.asarray(t).tolist() for t in self.theta],
            "phi": entries,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    def model_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_json(cls, doc) -> "ModelSpec":
        """Parse a model-spec document (dict or JSON text), 1-indexed nodes."""
        if isinstance(doc, (str, bytes)):
            try:
                doc = json.loads(doc)
            except json.JSONDecodeError as exc:
                raise SpecFormatError(f"malformed JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise SpecFormatError("model spec must be a JSON object")
        try:
            p = int(doc["p"])
            d = int(doc.get("d", 1))
            families = [NodeFamily.from_json(f) for f in doc["families"]]
            theta = [np.asarray(t, dtype=float) for t in doc["theta"]]
            phi = {}
            for entry in doc.get("phi", []):
                key = (int(entry["lag"]), int(entry["a"]) - 1, int(entry["b"]) - 1)
                if key in phi:
                    raise DuplicateEntry(
                        f"duplicate phi entry (lag={key[0]}, a={key[1] + 1}, b={key[2] + 1})",
                        block=(key[0], key[1] + 1, key[2] + 1),
                    )
                phi[key] = np.asarray(entry["matrix"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DuplicateEntry):
                raise
            raise SpecFormatError(f"bad model spec: {exc}") from exc
        return cls(p=p, d=d, families=families, theta=theta, phi=phi)


@dataclass(frozen=True, eq=False)
class ValidatedModel:
    spec: ModelSpec
    psi: Mapping  # lag -> (K, K) block matrix, lag in -d..d
    offsets: tuple  # stat offsets per node, length p + 1
    neighborhoods: tuple  # frozenset per node
    hs_screening: object = None

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def families(self) -> tuple:
        return self.spec.families

    @property
    def k_total(self) -> int:
        return self.offsets[-1]

    @property
    def theta_vec(self) -> np.ndarray:
        return np.concatenate(self.spec.theta)

    def node_slice(self, a: int) -> slice:
        return slice(self.offsets[a], self.offsets[a + 1])

    def stats(self, states) -> np.ndarray:
        """Stacked statistics ``S(x)`` for states of shape ``(..., p)``."""
        states = np.asarray(states, dtype=float)
        if states.shape[-1] != self.p:
            raise DimensionMismatch(f"states need trailing dimension {self.p}")
        return np.concatenate(
            [suff_stats(f, states[..., a]) for a, f in enumerate(self.families)], axis=-1
        )

    def log_base(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        return sum(base_measure(f, states[..., a]) for a, f in enumerate(self.families))

    def model_hash(self) -> str:
        return self.spec.model_hash()


@dataclass(frozen=True)
class CIGraph:
    vertices: tuple
    edges: frozenset  # of sorted 2-tuples


def _check_dimensions(spec: ModelSpec) -> None:
    if spec.p < 1 or spec.d < 1:
        raise DimensionMismatch(f"p and d must be positive, got p={spec.p}, d={spec.d}")
    if len(spec.families) != spec.p:
        raise DimensionMismatch(f"expected {spec.p} families, got {len(spec.families)}")
    if len(spec.theta) != spec.p:
        raise DimensionMismatch(f"expected {spec.p} theta vectors, got {len(spec.theta)}")
    for a, (fam, th) in enumerate(zip(spec.families, spec.theta)):
        if th.shape != (fam.k_stats,):
            raise DimensionMismatch(
                f"theta for node {a + 1} has shape {th.shape}, expected ({fam.k_stats},)",
                block=(a + 1,),
            )
    for (lag, a, b), mat in spec.phi.items():
        label = (lag, a + 1, b + 1)
        if not (0 <= a < spec.p and 0 <= b < spec.p):
            raise DimensionMismatch(f"phi entry {label} refers to a missing node", block=label)
        if abs(lag) > spec.d:
            raise DimensionMismatch(f"phi entry {label} has lag beyond d={spec.d}", block=label)
        want = (spec.families[a].k_stats, spec.families[b].k_stats)
        if mat.shape != want:
            raise DimensionMismatch(
                f"phi entry {label} has shape {mat.shape}, expected {want}", block=label
            )
        if not np.all(np.isfinite(mat)):
            raise DimensionMismatch(f"phi entry {label} is not finite", block=label)


def _check_symmetry(spec: ModelSpec) -> None:
    for (lag, a, b), mat in sorted(spec.phi.items()):
        label = (lag, a + 1, b + 1)
        if lag == 0 and a == b and np.any(mat != 0):
            raise SelfCouplingAtLagZero(
                f"node {a + 1} couples to itself at lag 0", block=label
            )
        mirror = spec.block(-lag, b, a)
        if not np.allclose(mat, mirror.T, rtol=0.0, atol=_SYM_ATOL):
            which = "lag-0 symmetry" if lag == 0 else "lag transpose"
            raise SymmetryViolation(
                f"{which} violated: phi{label} != transpose of phi{(-lag, b + 1, a + 1)}",
                block=label,
            )


def validate(spec) -> ValidatedModel:
    """Check compatibility constraints and assemble the block coupling matrices."""
    if isinstance(spec, ValidatedModel):
        return spec
    _check_dimensions(spec)
    _check_symmetry(spec)

    offsets = tuple(np.concatenate([[0], np.cumsum(spec.k_stats)]).astype(int).tolist())
    k = offsets[-1]
    psi = {}
    for lag in range(-spec.d, spec.d + 1):
        mat = np.zeros((k, k))
        for a, b in itertools.product(range(spec.p), repeat=2):
            blk = spec.phi.get((lag, a, b))
            if blk is not None:
                mat[offsets[a]:offsets[a + 1], offsets[b]:offsets[b + 1]] = blk
        psi[lag] = _frozen(mat)

    nbrs = [set() for _ in range(spec.p)]
    for (lag, a, b), mat in spec.phi.items():
        if a != b and np.any(mat != 0):
            nbrs[a].add(b)
            nbrs[b].add(a)

    model = ValidatedModel(
        spec=spec,
        psi=MappingProxyType(psi),
        offsets=offsets,
        neighborhoods=tuple(frozenset(n) for n in nbrs),
    )
    from .kernel import sufficient_hs_check

    object.__setattr__(model, "hs_screening", sufficient_hs_check(model))
    return model


def ci_graph(model: ValidatedModel) -> CIGraph:
    edges = {(a, b) for a in range(model.p) for b in model.neighborhoods[a] if a < b}
    return CIGraph(vertices=tuple(range(model.p)), edges=frozenset(edges))


def time_unrolled_graph(model: ValidatedModel, window: int) -> CIGraph:
    """Graph over ``(node, time)`` sites for ``window`` consecutive times."""
    if window < 2:
        raise ValueError("window must be at least 2")
    vertices = tuple((a, t) for t in range(window) for a in range(model.p))
    edges = set()
    for (lag, a, b), mat in model.spec.phi.items():
        if lag < 0 or not np.any(mat != 0):
            continue  # negative lags mirror the positive ones
        for t in range(window - lag):
            u, v = (a, t), (b, t + lag)
            if u != v:
                edges.add(tuple(sorted((u, v), key=lambda s: (s[1], s[0]))))
    return CIGraph(vertices=vertices, edges=frozenset(edges))


def _dot_id(vertex, labels) -> str:
    if isinstance(vertex, tuple):
        a, t = vertex
        name = labels[a] if labels else str(a + 1)
        return f'"{name}@{t + 1}"'
    name = labels[vertex] if labels else str(vertex + 1)
    return name if name.isidentifier() or name.isdigit() else json.dumps(name)


def export_dot(graph: CIGraph, labels: Sequence[str] | None = None, name: str = "cig") -> str:
    """Undirected DOT text with deterministic vertex and edge ordering."""
    def order(v):
        return (v[1], v[0]) if isinstance(v, tuple) else (v,)

    lines = [f"graph {name} {{"]
    for v in sorted(graph.vertices, key=order):
        lines.append(f"  {_dot_id(v, labels)};")
    for u, v in sorted(graph.edges, key=lambda e: (order(e[0]), order(e[1]))):
        lines.append(f"  {_dot_id(u, labels)} -- {_dot_id(v, labels)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def mirrored(phi: Mapping) -> dict:
    """Complete a coupling map with the transposed mirror of every block.

    Blocks already present are kept; missing ``(-lag, b, a)`` partners are
    filled with the transpose.
    """
    out = {tuple(k): np.atleast_2d(np.asarray(m, dtype=float)) for k, m in phi.items()}
    for (lag, a, b), mat in list(out.items()):
        out.setdefault((-lag, b, a), mat.T.copy())
    return out


def ar1_spec(phi: float, precision: float | None = None) -> ModelSpec:
    """Univariate Gaussian AR(1) with conditional precision ``1 + phi²`` by default."""
    prec = 1.0 + phi * phi if precision is None else precision
    blk = np.array([[0.0, 0.0], [0.0, phi]])
    return ModelSpec(
        p=1, d=1, families=[gaussian()], theta=[[prec, 0.0]],
        phi={(1, 0, 0): blk, (-1, 0, 0): blk.T},
    )


def univariate_spec(family: NodeFamily, theta, phi: float) -> ModelSpec:
    """One-node, first-order model with scalar lag-one coupling on the last statistic."""
    k = family.k_stats
    blk = np.zeros((k, k))
    blk[-1, -1] = phi
    return ModelSpec(
        p=1, d=1, families=[family], theta=[np.atleast_1d(theta)],
        phi={(1, 0, 0): blk, (-1, 0, 0): blk.T},
    )


def _interval_scale(c: float, lo: float, hi: float) -> tuple[float, float]:
    if c == 0:
        return 0.0, 0.0
    a, b = c * lo, c * hi
    return (a, b) if c > 0 else (b, a)


def coupling_terms(model: ValidatedModel, a: int):
    """Yield ``(i, b, j, c)``: coefficient ``c`` of ``s_j^{(b)}`` inside ``Θ_a[i]``.

    One entry per coupling at every lag; the lag itself is irrelevant for
    bounding because every lag refers to a distinct neighbouring site.
    """
    for (lag, aa, b), mat in sorted(model.spec.phi.items()):
        if aa != a:
            continue
        for i in range(mat.shape[0]):
            for j in range(mat.shape[1]):
                if mat[i, j] != 0:
                    yield i, b, j, float(mat[i, j])


def natural_parameter_bounds(model: ValidatedModel, a: int) -> list[tuple[float, float]]:
    """Interval enclosing each component of ``Θ_a`` over all neighbour configurations."""
    bounds = [[float(t), float(t)] for t in model.spec.theta[a]]
    for i, b, j, c in coupling_terms(model, a):
        lo, hi = model.families[b].stat_ranges()[j]
        dlo, dhi = _interval_scale(c, lo, hi)
        bounds[i][0] += dlo
        bounds[i][1] += dhi
    return [tuple(bd) for bd in bounds]

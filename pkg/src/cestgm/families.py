"""Exponential-family node types.

Each node conditional has the natural form ``p(x) ∝ exp(s(x)·θ + c(x))``
with respect to a reference measure (Lebesgue or counting).  Conventions:

==============  ==========================  ===============  =========
kind            s(x)                        c(x)             support
==============  ==========================  ===============  =========
gaussian        (-x²/2, x)                  0                ℝ
binary          x                           0                {0, 1}
poisson         x                           -log x!          ℕ
exponential     -x                          0                [0, ∞)
beta            (log x, log(1-x))           0                (0, 1)
binomial        x                           log C(n, x)      {0..n}
==============  ==========================  ===============  =========

With these conventions the Gaussian ``θ₁`` is the conditional precision and
the exponential ``θ`` is the conditional rate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln

from .errors import InvalidNaturalParameter, OutOfSupport, SpecFormatError


class Kind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    BINARY = "binary"
    POISSON = "poisson"
    EXPONENTIAL = "exponential"
    BETA = "beta"
    BINOMIAL = "binomial"


class Measure(str, enum.Enum):
    LEBESGUE = "lebesgue"
    COUNTING = "counting"


# Integer codes used by the compiled Gibbs kernel.
KIND_CODES = {
    Kind.GAUSSIAN: 0,
    Kind.BINARY: 1,
    Kind.POISSON: 2,
    Kind.EXPONENTIAL: 3,
    Kind.BETA: 4,
    Kind.BINOMIAL: 5,
}


@dataclass(frozen=True)
class NodeFamily:
    kind: Kind
    n_trials: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.BINOMIAL:
            if int(self.n_trials) != self.n_trials or self.n_trials < 1:
                raise ValueError("binomial family needs a positive integer n_trials")
            object.__setattr__(self, "n_trials", int(self.n_trials))
        elif self.n_trials:
            raise ValueError(f"n_trials is only meaningful for binomial, not {self.kind.value}")

    @property
    def k_stats(self) -> int:
        return 2 if self.kind in (Kind.GAUSSIAN, Kind.BETA) else 1

    @property
    def measure(self) -> Measure:
        if self.kind in (Kind.GAUSSIAN, Kind.EXPONENTIAL, Kind.BETA):
            return Measure.LEBESGUE
        return Measure.COUNTING

    @property
    def discrete(self) -> bool:
        return self.measure is Measure.COUNTING

    @property
    def support(self) -> tuple[float, float]:
        """Closure of the support as ``(lo, hi)``; open ends are reported as-is."""
        return {
            Kind.GAUSSIAN: (-math.inf, math.inf),
            Kind.BINARY: (0.0, 1.0),
            Kind.POISSON: (0.0, math.inf),
            Kind.EXPONENTIAL: (0.0, math.inf),
            Kind.BETA: (0.0, 1.0),
            Kind.BINOMIAL: (0.0, float(self.n_trials)),
        }[self.kind]

    def stat_ranges(self) -> list[tuple[float, float]]:
        """Range of each sufficient statistic over the support."""
        return {
            Kind.GAUSSIAN: [(-math.inf, 0.0), (-math.inf, math.inf)],
            Kind.BINARY: [(0.0, 1.0)],
            Kind.POISSON: [(0.0, math.inf)],
            Kind.EXPONENTIAL: [(-math.inf, 0.0)],
            Kind.BETA: [(-math.inf, 0.0), (-math.inf, 0.0)],
            Kind.BINOMIAL: [(0.0, float(self.n_trials))],
        }[self.kind]

    def in_support(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        finite = np.isfinite(x)
        k = self.kind
        if k is Kind.GAUSSIAN:
            return finite
        if k is Kind.BINARY:
            return (x == 0) | (x == 1)
        if k is Kind.POISSON:
            return finite & (x >= 0) & (x == np.floor(x))
        if k is Kind.EXPONENTIAL:
            return finite & (x >= 0)
        if k is Kind.BETA:
            return (x > 0) & (x < 1)
        return finite & (x >= 0) & (x <= self.n_trials) & (x == np.floor(x))

    def to_json(self):
        if self.kind is Kind.BINOMIAL:
            return {"kind": "binomial", "n_trials": self.n_trials}
        return self.kind.value

    @classmethod
    def from_json(cls, obj) -> "NodeFamily":
        try:
            if isinstance(obj, str):
                return cls(Kind(obj.lower()))
            kind = Kind(str(obj["kind"]).lower())
            return cls(kind, int(obj.get("n_trials", 0)))
        except (KeyError, ValueError, TypeError) as exc:
            raise SpecFormatError(f"bad family descriptor {obj!r}: {exc}") from exc


def gaussian() -> NodeFamily:
    return NodeFamily(Kind.GAUSSIAN)


def binary() -> NodeFamily:
    return NodeFamily(Kind.BINARY)


def poisson() -> NodeFamily:
    return NodeFamily(Kind.POISSON)


def exponential() -> NodeFamily:
    return NodeFamily(Kind.EXPONENTIAL)


def beta() -> NodeFamily:
    return NodeFamily(Kind.BETA)


def binomial(n_trials: int) -> NodeFamily:
    return NodeFamily(Kind.BINOMIAL, n_trials)


def _check_support(family: NodeFamily, x: np.ndarray) -> None:
    ok = family.in_support(x)
    if not np.all(ok):
        bad = np.asarray(x, dtype=float)[~ok].ravel()[0]
        raise OutOfSupport(f"{bad!r} is outside the support of the {family.kind.value} family")


def suff_stats(family: NodeFamily, x) -> np.ndarray:
    """Sufficient statistics; output has shape ``np.shape(x) + (K,)``."""
    x = np.asarray(x, dtype=float)
    _check_support(family, x)
    k = family.kind
    if k is Kind.GAUSSIAN:
        return np.stack([-0.5 * x * x, x], axis=-1)
    if k is Kind.BETA:
        return np.stack([np.log(x), np.log1p(-x)], axis=-1)
    if k is Kind.EXPONENTIAL:
        return (-x)[..., None]
    return x[..., None].copy()


def base_measure(family: NodeFamily, x) -> np.ndarray:
    """The log base-measure term ``c(x)``."""
    x = np.asarray(x, dtype=float)
    _check_support(family, x)
    if family.kind is Kind.POISSON:
        return -gammaln(x + 1.0)
    if family.kind is Kind.BINOMIAL:
        n = family.n_trials
        return gammaln(n + 1.0) - gammaln(x + 1.0) - gammaln(n - x + 1.0)
    return np.zeros_like(x)


def check_natural_parameter(family: NodeFamily, theta) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (family.k_stats,):
        raise InvalidNaturalParameter(
            f"{family.kind.value} needs {family.k_stats} natural parameters, got {theta.shape}"
        )
    if not np.all(np.isfinite(theta)):
        raise InvalidNaturalParameter(f"non-finite natural parameter {theta}")
    k = family.kind
    if k is Kind.GAUSSIAN and theta[0] <= 0:
        raise InvalidNaturalParameter(f"gaussian precision must be positive, got {theta[0]}")
    if k is Kind.EXPONENTIAL and theta[0] <= 0:
        raise InvalidNaturalParameter(f"exponential rate must be positive, got {theta[0]}")
    if k is Kind.BETA and (theta[0] <= -1 or theta[1] <= -1):
        raise InvalidNaturalParameter(
            f"beta shapes must be positive, got {theta[0] + 1}, {theta[1] + 1}"
        )
    return theta


def sample_conditional(family: NodeFamily, theta, rng: np.random.Generator, size=None):
    """Exact draw(s) from ``p(x) ∝ exp(s(x)·θ + c(x))``."""
    theta = check_natural_parameter(family, theta)
    k = family.kind
    if k is Kind.GAUSSIAN:
        return rng.normal(theta[1] / theta[0], 1.0 / math.sqrt(theta[0]), size=size)
    if k is Kind.BINARY:
        out = rng.random(size=size) < expit(theta[0])
        return out.astype(float) if size is not None else float(out)
    if k is Kind.POISSON:
        out = rng.poisson(math.exp(theta[0]), size=size)
        return out.astype(float) if size is not None else float(out)
    if k is Kind.EXPONENTIAL:
        return rng.exponential(1.0 / theta[0], size=size)
    if k is Kind.BETA:
        return rng.beta(theta[0] + 1.0, theta[1] + 1.0, size=size)
    out = rng.binomial(family.n_trials, expit(theta[0]), size=size)
    return out.astype(float) if size is not None else float(out)

"""Approximate simulation by Gibbs sampling on a padded reflective-boundary window.

The chain targets the reflective-boundary joint on ``n + 2m`` consecutive
times.  Its central ``n + 2`` sites approximate the stationary joint, with an
error that decays geometrically in the pad width ``m``.

Window positions are 0-based; position ``i`` corresponds to time
``i - (m - 1)``, so the kept sites ``0..n+1`` sit at positions ``m-1..m+n``.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import warnings
from dataclasses import asdict, dataclass

import numba
import numpy as np

from .errors import InvalidNaturalParameter
from .families import KIND_CODES, check_natural_parameter, sample_conditional
from .kernel import HSStatus
from .model import ValidatedModel

MAX_PAD = 200


class Scan(str, enum.Enum):
    SYSTEMATIC = "systematic"
    RANDOM = "random"


@dataclass(frozen=True)
class GibbsConfig:
    n: int
    m: int = 2
    sweeps: int = 1000
    burnin: int = 0
    thin: int = 1
    scan: Scan = Scan.SYSTEMATIC
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scan", Scan(self.scan))
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if self.m < 2:
            raise ValueError("pad width m must be at least 2")
        if not self.sweeps > self.burnin >= 0:
            raise ValueError("need sweeps > burnin >= 0")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")

    @property
    def window(self) -> int:
        return self.n + 2 * self.m

    @property
    def kept(self) -> int:
        return (self.sweeps - self.burnin + self.thin - 1) // self.thin

    def to_json(self) -> dict:
        out = asdict(self)
        out["scan"] = self.scan.value
        return out


@dataclass(frozen=True, eq=False)
class SamplePath:
    draws: np.ndarray  # (kept, n + 2, p), times 0..n+1
    sweeps: np.ndarray  # sweep number of each kept draw
    raw: np.ndarray  # (n + 2m, p) final state of the padded chain
    config: GibbsConfig
    model_hash: str

    def provenance(self) -> dict:
        return {"config": self.config.to_json(), "model_hash": self.model_hash}


def _model_arrays(model: ValidatedModel):
    d = model.d
    k = model.k_total
    psi = np.zeros((2 * d + 1, k, k))
    for lag in range(-d, d + 1):
        psi[lag + d] = model.psi[lag]
    kinds = np.array([KIND_CODES[f.kind] for f in model.families], dtype=np.int64)
    ntrials = np.array([f.n_trials for f in model.families], dtype=np.int64)
    offsets = np.array(model.offsets, dtype=np.int64)
    return model.theta_vec.copy(), psi, offsets, kinds, ntrials


def full_conditional_params(model: ValidatedModel, state: np.ndarray, t: int, a: int) -> np.ndarray:
    """Natural parameter of node ``a`` at window position ``t``.

    Coupling terms whose time index leaves the window are dropped, which is
    the reflective boundary convention.
    """
    state = np.asarray(state, dtype=float)
    length = state.shape[0]
    sl = model.node_slice(a)
    out = np.array(model.spec.theta[a], dtype=float)
    for lag in range(-model.d, model.d + 1):
        u = t + lag
        if 0 <= u < length:
            out += model.psi[lag][sl] @ model.stats(state[u])
    return out


@numba.njit(cache=True)
def _set_stats(kind, x, row, off):
    if kind == 0:
        row[off] = -0.5 * x * x
        row[off + 1] = x
    elif kind == 3:
        row[off] = -x
    elif kind == 4:
        row[off] = math.log(x)
        row[off + 1] = math.log1p(-x)
    else:
        row[off] = x


@numba.njit(cache=True)
def _expit(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _draw(kind, ntrial, th0, th1):
    """One conditional draw; returns (value, ok)."""
    if not (math.isfinite(th0) and math.isfinite(th1)):
        return 0.0, False
    if kind == 0:
        if th0 <= 0:
            return 0.0, False
        return np.random.normal(th1 / th0, 1.0 / math.sqrt(th0)), True
    if kind == 1:
        return 1.0 if np.random.random() < _expit(th0) else 0.0, True
    if kind == 2:
        return float(np.random.poisson(math.exp(th0))), True
    if kind == 3:
        if th0 <= 0:
            return 0.0, False
        return np.random.exponential(1.0 / th0), True
    if kind == 4:
        if th0 <= -1 or th1 <= -1:
            return 0.0, False
        return np.random.beta(th0 + 1.0, th1 + 1.0), True
    return float(np.random.binomial(ntrial, _expit(th0))), True


@numba.njit(cache=True)
def _site_update(x, s, i, a, theta, psi, offsets, kinds, ntrials, d):
    length = x.shape[0]
    lo, hi = offsets[a], offsets[a + 1]
    th0 = theta[lo]
    th1 = theta[lo + 1] if hi - lo > 1 else 0.0
    for lag in range(-d, d + 1):
        u = i + lag
        if u < 0 or u >= length:
            continue
        mat = psi[lag + d]
        for j in range(s.shape[1]):
            sj = s[u, j]
            if sj != 0.0:
                th0 += mat[lo, j] * sj
                if hi - lo > 1:
                    th1 += mat[lo + 1, j] * sj
    val, ok = _draw(kinds[a], ntrials[a], th0, th1)
    if ok:
        x[i, a] = val
        _set_stats(kinds[a], val, s[i], lo)
    return ok


@numba.njit(cache=True, nogil=True)
def _run_chain(theta, psi, offsets, kinds, ntrials, d, length, sweeps, burnin, thin,
               random_scan, seed, keep_lo, keep_len, out, out_sweeps, raw):
    np.random.seed(seed)
    p = kinds.shape[0]
    k = theta.shape[0]
    x = np.zeros((length, p))
    s = np.zeros((length, k))
    err = np.zeros(4, dtype=np.int64)  # flag, position, node, sweep
    for i in range(length):
        for a in range(p):
            lo, hi = offsets[a], offsets[a + 1]
            th1 = theta[lo + 1] if hi - lo > 1 else 0.0
            val, ok = _draw(kinds[a], ntrials[a], theta[lo], th1)
            if not ok:
                err[0], err[1], err[2], err[3] = 1, i, a, 0
                return err
            x[i, a] = val
            _set_stats(kinds[a], val, s[i], lo)
    kept = 0
    for sweep in range(1, sweeps + 1):
        if random_scan:
            for _ in range(length * p):
                i = np.random.randint(0, length)
                a = np.random.randint(0, p)
                if not _site_update(x, s, i, a, theta, psi, offsets, kinds, ntrials, d):
                    err[0], err[1], err[2], err[3] = 1, i, a, sweep
                    return err
        else:
            for i in range(length):
                for a in range(p):
                    if not _site_update(x, s, i, a, theta, psi, offsets, kinds, ntrials, d):
                        err[0], err[1], err[2], err[3] = 1, i, a, sweep
                        return err
        if sweep > burnin and (sweep - burnin - 1) % thin == 0:
            out[kept] = x[keep_lo:keep_lo + keep_len]
            out_sweeps[kept] = sweep
            kept += 1
    raw[:, :] = x
    return err


def gibbs_run(model: ValidatedModel, config: GibbsConfig, rng: np.random.Generator | None = None) -> SamplePath:
    """Run one padded Gibbs chain and return the cropped kept draws."""
    if model.hs_screening is not None and model.hs_screening.status is HSStatus.VIOLATED:
        warnings.warn(
            "sufficient Hilbert-Schmidt screening failed: " + "; ".join(model.hs_screening.reasons),
            stacklevel=2,
        )
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    seed = int(rng.integers(0, 2**32))
    theta, psi, offsets, kinds, ntrials = _model_arrays(model)
    length = config.window
    keep_len = config.n + 2
    out = np.empty((config.kept, keep_len, model.p))
    out_sweeps = np.empty(config.kept, dtype=np.int64)
    raw = np.empty((length, model.p))
    err = _run_chain(
        theta, psi, offsets, kinds, ntrials, model.d, length, config.sweeps, config.burnin,
        config.thin, config.scan is Scan.RANDOM, seed, config.m - 1, keep_len, out, out_sweeps, raw,
    )
    if err[0]:
        pos, a, sweep = int(err[1]), int(err[2]), int(err[3])
        t = pos - (config.m - 1)
        raise InvalidNaturalParameter(
            f"node {a + 1} at time {t} in sweep {sweep}: natural parameter outside the "
            f"valid region of the {model.families[a].kind.value} family",
            site=(t, a, sweep),
        ) from None
    return SamplePath(out, out_sweeps, raw, config, model.model_hash())


def effective_pad(model: ValidatedModel, spectral, tv_target: float) -> int:
    """Smallest pad ``m`` with ``ρ^{m-1} ≤ tv_target``, clamped to [2, 200], in time steps.

    For block models ``ρ`` is a per-block rate, so the block count is scaled by ``d``.
    """
    if not 0 < tv_target < 1:
        raise ValueError("tv_target must lie in (0, 1)")
    rho = spectral.ratio
    if rho <= 0:
        m = 2
    elif rho >= 1:
        m = MAX_PAD
    else:
        m = math.ceil(1 + math.log(tv_target) / math.log(rho) - 1e-9)
    return min(max(m, 2), MAX_PAD) * model.d


# --- export ----------------------------------------------------------------

CSV_HEADER = ("sweep", "t", "node", "value")


def write_paths_csv(path, sample: SamplePath) -> None:
    """One row per kept (sweep, time, node) with full-precision values."""
    kept, times, p = sample.draws.shape
    sweep = np.repeat(sample.sweeps, times * p)
    t = np.tile(np.repeat(np.arange(times), p), kept)
    node = np.tile(np.arange(1, p + 1), kept * times)
    vals = sample.draws.ravel()
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        lines = (f"{a},{b},{c},{v!r}\n" for a, b, c, v in zip(sweep.tolist(), t.tolist(), node.tolist(), vals.tolist()))
        fh.writelines(lines)


def read_paths_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`write_paths_csv`: returns ``(draws, sweeps)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = np.array([[float(c) for c in row] for row in reader])
    if rows.size == 0:
        return np.empty((0, 0, 0)), np.empty(0, dtype=np.int64)
    sweeps = np.unique(rows[:, 0]).astype(np.int64)
    times = int(rows[:, 1].max()) + 1
    p = int(rows[:, 2].max())
    return rows[:, 3].reshape(len(sweeps), times, p), sweeps


def write_provenance(path, sample: SamplePath, extra: dict | None = None) -> None:
    doc = sample.provenance()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def direct_samples(model: ValidatedModel, a: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Independent draws of node ``a`` at its offset ``θ^{(a)}`` (no couplings)."""
    theta = check_natural_parameter(model.families[a], model.spec.theta[a])
    return np.asarray(sample_conditional(model.families[a], theta, rng, size=size), dtype=float)

"""Acceptance gate: each criterion at its stated tolerance.

Every check is recorded through the ``record`` fixture, and a summary line
``criterion N: PASS|FAIL`` is printed at the end of the session.
"""

import itertools
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from cestgm import cli
from cestgm.density import (
    consistency_check,
    exact_beta,
    joint_density,
    marginal_p1,
    transition_matrix,
    tv_decay,
)
from cestgm.dmarkov import (
    block_joint_density,
    block_ratio_to_first_order,
    block_spectrum,
    build_block_kernel,
    embed_first_order,
    shift_consistency_check,
)
from cestgm.families import beta, binary, binomial, exponential, gaussian, poisson
from cestgm.kernel import build_kernel, clique_factorization, factorization_residual, hs_norm_sq
from cestgm.model import ar1_spec, ci_graph, univariate_spec, validate
from cestgm.quadrature import GridConfig, build_space, fallback_space
from cestgm.sampler import GibbsConfig, effective_pad, gibbs_run
from cestgm.spectral import build_operator, dense_oracle, power_iterate

from benchmarks import binary_d2, poisson_trivariate, var1_trivariate

SQRT_2PI = math.sqrt(2 * math.pi)


def _spectral(spec, config=None, tol=1e-10):
    model = validate(spec)
    space = build_space(model, config)
    return model, power_iterate(build_operator(model, space), tol=tol)


# exactness checks on counting spaces run the solver to rounding level
EXACT_TOL = 1e-14


def _batch_se(x, batches=40):
    n = len(x) // batches * batches
    means = np.asarray(x[:n]).reshape(batches, -1).mean(axis=1)
    return float(np.std(means, ddof=1) / math.sqrt(batches))


# --- 1 ----------------------------------------------------------------------


def test_criterion_1_ar1_spectral_suite(record):
    start = time.perf_counter()
    ok = True
    cfg = GridConfig(grid_size=201, bounds={0: (-8.0, 8.0)})
    for phi in (0.0, 0.3, 0.5, 0.8):
        _, res = _spectral(ar1_spec(phi), cfg)
        x = res.op.space.points[:, 0]
        wt = res.op.weights

        r_err = abs(res.r - SQRT_2PI)
        ok &= record(1, f"phi={phi} r", r_err < 1e-6, f"|r - sqrt(2pi)| = {r_err:.3g}")

        p1 = res.v * res.w
        ref = stats.norm.pdf(x, scale=1 / math.sqrt(1 - phi**2))
        p_err = float(np.max(np.abs(p1 - ref)))
        ok &= record(1, f"phi={phi} p1", p_err < 1e-6, f"sup |p1 - normal| = {p_err:.3g}")

        v2 = res.v**2
        coef = np.polyfit(x, np.log(v2), 2, w=np.sqrt(v2 * wt))
        prec_err = abs(-coef[0] - (1 - phi**2) / 2)
        ok &= record(1, f"phi={phi} v^2 precision", prec_err < 1e-4, f"error {prec_err:.3g}")
    elapsed = time.perf_counter() - start
    ok &= record(1, "runtime", elapsed < 5.0, f"{elapsed:.2f} s")
    assert ok


# --- 2 ----------------------------------------------------------------------


def test_criterion_2_ar1_joint_identity(record):
    phi = 0.5
    model, res = _spectral(ar1_spec(phi))
    idx = np.arange(4)
    cov = phi ** np.abs(idx[:, None] - idx[None, :]) / (1 - phi**2)
    exact = stats.multivariate_normal(mean=np.zeros(4), cov=cov)
    rng = np.random.default_rng(2)
    pts = exact.rvs(size=100, random_state=rng)
    ratios = np.array(
        [joint_density(model, res, 4, pt.reshape(4, 1)) / exact.pdf(pt) for pt in pts]
    )
    cv = float(np.std(ratios) / np.mean(ratios))
    assert record(2, "ratio coefficient of variation", cv < 1e-6, f"cv = {cv:.3g}")


# --- 3 ----------------------------------------------------------------------


@pytest.mark.parametrize("phi", [1.0, -1.0])
def test_criterion_3_noncompact_detection(record, phi):
    model = validate(ar1_spec(phi))
    hs = hs_norm_sq(build_kernel(model), fallback_space(model), max_doublings=8)
    doublings = len(hs.history) - 1
    ok = hs.not_hilbert_schmidt and doublings <= 8
    assert record(3, f"phi={phi}", ok, f"flagged={hs.not_hilbert_schmidt} after {doublings} doublings")


# --- 4 ----------------------------------------------------------------------


def test_criterion_4_binary_chain_exactness(record):
    model, res = _spectral(univariate_spec(binary(), [0.0], 1.0), tol=EXACT_TOL)
    e = math.e
    disc = math.sqrt((e - 1) ** 2 + 4)
    r_exact = (1 + e + disc) / 2
    lam2_exact = (1 + e - disc) / 2
    # eigenvector of [[1, 1], [1, e]] for r: (1, r - 1), unit norm
    v_exact = np.array([1.0, r_exact - 1.0])
    v_exact /= np.linalg.norm(v_exact)

    ok = record(4, "r", abs(res.r - r_exact) < 1e-12, f"{abs(res.r - r_exact):.3g}")
    ok &= record(4, "v", np.max(np.abs(res.v - v_exact)) < 1e-12, f"{np.max(np.abs(res.v - v_exact)):.3g}")
    ok &= record(4, "w", np.max(np.abs(res.w - v_exact)) < 1e-12, f"{np.max(np.abs(res.w - v_exact)):.3g}")

    dense = dense_oracle(res.op)
    ok &= record(4, "dense oracle", abs(dense.r - res.r) < 1e-12, f"{abs(dense.r - res.r):.3g}")

    p1 = marginal_p1(res).values
    ok &= record(4, "p1 sums to one", abs(p1.sum() - 1) < 1e-12, f"{p1.sum():.15f}")
    tm = transition_matrix(res)
    row_err = float(np.max(np.abs(tm.sum(axis=1) - 1)))
    ok &= record(4, "transition rows", row_err < 1e-12, f"{row_err:.3g}")
    inv_err = float(np.max(np.abs(p1 @ tm - p1)))
    ok &= record(4, "p1 invariant", inv_err < 1e-12, f"{inv_err:.3g}")

    ns = np.arange(1, 11)
    betas = np.array([exact_beta(res, int(k)) for k in ns])
    slope = np.polyfit(ns, np.log(betas), 1)[0]
    target = math.log(abs(lam2_exact) / r_exact)
    rel = abs(slope / target - 1)
    ok &= record(4, "log beta slope", rel < 0.10, f"slope {slope:.6f} vs {target:.6f} ({rel:.2%})")
    assert ok


# --- 5 ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "name,spec,tol",
    [
        ("binary", univariate_spec(binary(), [-0.4], 1.2), 1e-12),
        ("binomial", univariate_spec(binomial(4), [0.3], -0.4), 1e-12),
        ("poisson", univariate_spec(poisson(), [0.5], -0.3), 1e-12),
        ("ar1", ar1_spec(0.5), 1e-7),
    ],
)
def test_criterion_5_kolmogorov_consistency(record, name, spec, tol):
    _, res = _spectral(spec, tol=EXACT_TOL if tol < 1e-10 else 1e-10)
    devs = [consistency_check(res, n) for n in (2, 3, 4)]
    worst = max(devs)
    assert record(5, name, worst < tol, f"max deviation {worst:.3g} (tol {tol:g})")


# --- 6 ----------------------------------------------------------------------


def test_criterion_6_tv_decay(record):
    model, res = _spectral(univariate_spec(binary(), [0.0], 1.0))
    ms = list(range(2, 9))
    tv = np.array(tv_decay(model, res, 2, ms))
    ok = record(6, "monotone", bool(np.all(np.diff(tv) < 0)), np.array2string(tv, precision=3))
    slope = np.polyfit(ms, np.log(tv), 1)[0]
    target = math.log(res.ratio)
    rel = abs(slope / target - 1)
    ok &= record(6, "log slope", rel < 0.15, f"slope {slope:.5f} vs {target:.5f} ({rel:.2%})")
    assert ok


# --- 7 ----------------------------------------------------------------------


IID_CASES = [
    ("gaussian", gaussian(), [2.0, 1.0], stats.norm(0.5, 1 / math.sqrt(2.0))),
    ("exponential", exponential(), [1.5], stats.expon(scale=1 / 1.5)),
    ("beta", beta(), [1.0, 2.0], stats.beta(2.0, 3.0)),
    ("poisson", poisson(), [math.log(3.0)], stats.poisson(3.0)),
    ("binary", binary(), [0.4], stats.bernoulli(1 / (1 + math.exp(-0.4)))),
    ("binomial", binomial(5), [-0.3], stats.binom(5, 1 / (1 + math.exp(0.3)))),
]


def _ks(sample, dist, discrete):
    if not discrete:
        res = stats.kstest(sample, dist.cdf)
        return res.statistic, res.pvalue
    values, counts = np.unique(sample, return_counts=True)
    support = np.arange(0, max(values.max(), dist.ppf(1 - 1e-12)) + 1)
    emp = np.cumsum(np.bincount(sample.astype(int), minlength=len(support))[: len(support)]) / len(sample)
    stat = float(np.max(np.abs(emp - dist.cdf(support))))
    # chi-square goodness of fit gives the p-value for count data
    obs = np.bincount(sample.astype(int), minlength=len(support))[: len(support)]
    expected = dist.pmf(support) * len(sample)
    keep = expected > 5
    chi = np.sum((obs[keep] - expected[keep]) ** 2 / expected[keep])
    pval = stats.chi2.sf(chi, max(int(keep.sum()) - 1, 1))
    return stat, pval


@pytest.mark.parametrize("name,family,theta,dist", IID_CASES, ids=[c[0] for c in IID_CASES])
def test_criterion_7a_zero_coupling_iid(record, name, family, theta, dist):
    start = time.perf_counter()
    model = validate(univariate_spec(family, theta, 0.0))
    sample = gibbs_run(model, GibbsConfig(n=8, m=2, sweeps=10_000, seed=11))
    draws = sample.draws[:, :, 0]
    pooled, _ = _ks(draws.ravel(), dist, family.discrete)
    ok = record(7, f"(a) {name} pooled KS", pooled < 0.01, f"{pooled:.4f}")
    pvals = [_ks(draws[:, t], dist, family.discrete)[1] for t in range(draws.shape[1])]
    ok &= record(7, f"(a) {name} per-site p-values", min(pvals) > 1e-3, f"min {min(pvals):.3g}")
    elapsed = time.perf_counter() - start
    ok &= record(7, f"(a) {name} runtime", elapsed < 60, f"{elapsed:.1f} s")
    assert ok


def test_criterion_7b_ar1_moments(record):
    start = time.perf_counter()
    model = validate(ar1_spec(0.5))
    cfg = GibbsConfig(n=64, m=30, sweeps=20_000, burnin=2_000, seed=7)
    x = gibbs_run(model, cfg).draws[:, :, 0]
    sq = (x**2).mean(axis=1)
    var = float(sq.mean())
    se_var = _batch_se(sq)
    ok = record(7, "(b) variance", abs(var - 4 / 3) < 3 * se_var, f"{var:.5f} +- {se_var:.5f}")

    cross = (x[:, :-1] * x[:, 1:]).mean(axis=1)
    batches = 40
    n = len(sq) // batches * batches
    rho_b = cross[:n].reshape(batches, -1).mean(1) / sq[:n].reshape(batches, -1).mean(1)
    rho = float(cross.mean() / sq.mean())
    se_rho = float(np.std(rho_b, ddof=1) / math.sqrt(batches))
    ok &= record(7, "(b) lag-1 autocorrelation", abs(rho - 0.5) < 3 * se_rho, f"{rho:.5f} +- {se_rho:.5f}")
    elapsed = time.perf_counter() - start
    ok &= record(7, "(b) runtime", elapsed < 60, f"{elapsed:.1f} s")
    assert ok


def test_criterion_7c_binary_marginal(record):
    start = time.perf_counter()
    model, res = _spectral(univariate_spec(binary(), [0.0], 1.0))
    p_one = float(marginal_p1(res).values[1])
    m = effective_pad(model, res, 1e-6)
    x = gibbs_run(model, GibbsConfig(n=64, m=m, sweeps=20_000, burnin=1_000, seed=5)).draws[:, :, 0]
    per_sweep = x.mean(axis=1)
    mean = float(per_sweep.mean())
    se = _batch_se(per_sweep)
    ok = record(7, "(c) binary marginal", abs(mean - p_one) < 3 * se, f"{mean:.5f} vs {p_one:.5f} (se {se:.5f})")
    elapsed = time.perf_counter() - start
    ok &= record(7, "(c) runtime", elapsed < 60, f"{elapsed:.1f} s")
    assert ok


# --- 8 ----------------------------------------------------------------------


@pytest.mark.parametrize("name,spec_fn", [("var1", var1_trivariate), ("poisson", poisson_trivariate)])
def test_criterion_8_graph_suite(record, name, spec_fn):
    model = validate(spec_fn())
    edges = {tuple(sorted((a + 1, b + 1))) for a, b in ci_graph(model).edges}
    ok = record(8, f"{name} edges", edges == {(1, 2), (2, 3)}, str(sorted(edges)))
    n_cliques = len(clique_factorization(build_kernel(model)))
    ok &= record(8, f"{name} cliques", n_cliques == 2, f"{n_cliques} maximal cliques")
    rng = np.random.default_rng(8)
    if name == "poisson":
        xs, ys = rng.integers(0, 12, size=(2, 1000, 3)).astype(float)
    else:
        xs, ys = rng.normal(scale=2.0, size=(2, 1000, 3))
    resid = factorization_residual(build_kernel(model), (xs, ys))
    ok &= record(8, f"{name} factorization residual", resid < 1e-12, f"{resid:.3g}")
    assert ok


# --- 9 ----------------------------------------------------------------------


def test_criterion_9_dmarkov_suite(record):
    bk = build_block_kernel(validate(binary_d2()))
    res = block_spectrum(bk)
    shift = shift_consistency_check(bk, res, 4)
    ok = record(9, "offset-invariant marginals", shift < 1e-10, f"{shift:.3g}")

    base = univariate_spec(binary(), [-0.2], 0.8)
    model1, res1 = _spectral(base)
    bk_e = build_block_kernel(validate(embed_first_order(base, 2)))
    res_e = block_spectrum(bk_e)
    ratio_err = abs(block_ratio_to_first_order(res_e.r, res1.r, 2) - 1)
    ok &= record(9, "embedded r equals r^2", ratio_err < 1e-8, f"{ratio_err:.3g}")

    worst = 0.0
    for seq in itertools.product([0.0, 1.0], repeat=4):
        pts = np.array(seq)
        pb = block_joint_density(bk_e, res_e, 2, pts)
        p1 = joint_density(model1, res1, 4, pts.reshape(4, 1))
        worst = max(worst, abs(pb / p1 - 1))
    ok &= record(9, "embedded joints", worst < 1e-8, f"max relative error {worst:.3g}")
    assert ok


# --- 10 ---------------------------------------------------------------------


def _run_all_commands(root: Path, spec_text: dict):
    root.mkdir()
    for name, text in spec_text.items():
        (root / name).write_text(text)
    cwd = os.getcwd()
    os.chdir(root)
    try:
        codes = [
            cli.main(["validate", "ar1.json", "--out", "out"]),
            cli.main(["graph", "ar1.json", "--unroll", "3", "--out", "out"]),
            cli.main(["spectrum", "ar1.json", "--grid-size", "101", "--out", "out"]),
            cli.main(["spectrum", "bin.json", "--out", "bout"]),
            cli.main(["simulate", "ar1.json", "--n", "16", "--m", "8", "--sweeps", "500",
                      "--burnin", "50", "--seed", "7", "--chains", "2", "--out", "sim"]),
            cli.main(["simulate", "bin.json", "--n", "16", "--sweeps", "500", "--auto-pad",
                      "--tv-target", "1e-3", "--seed", "3", "--out", "bsim"]),
            cli.main(["diagnose", "sim", "ar1.json", "--grid-size", "101", "--out", "diag"]),
        ]
    finally:
        os.chdir(cwd)
    return codes


def _strip_times(path: Path) -> str:
    doc = json.loads(path.read_text())
    for run in doc["runs"]:
        run.pop("started")
        run.pop("finished")
    return json.dumps(doc, sort_keys=True)


def test_criterion_10_cli_determinism(record, tmp_path):
    texts = {
        "ar1.json": json.dumps(ar1_spec(0.5).to_json()),
        "bin.json": json.dumps(univariate_spec(binary(), [0.0], 1.0).to_json()),
    }
    codes_a = _run_all_commands(tmp_path / "a", texts)
    codes_b = _run_all_commands(tmp_path / "b", texts)
    ok = record(10, "exit codes", codes_a == codes_b and codes_a[:6] == [0] * 6, str(codes_a))
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    ok &= record(10, "same file set", files_a == files_b, f"{len(files_a)} files")
    differing = []
    for rel in files_a:
        fa, fb = tmp_path / "a" / rel, tmp_path / "b" / rel
        if rel.name == cli.MANIFEST:
            same = _strip_times(fa) == _strip_times(fb)
        else:
            same = fa.read_bytes() == fb.read_bytes()
        if not same:
            differing.append(str(rel))
    ok &= record(10, "byte-identical outputs", not differing, ", ".join(differing) or "all identical")
    assert ok

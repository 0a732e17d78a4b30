import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from cestgm.errors import InvalidNaturalParameter, OutOfSupport, SpecFormatError
from cestgm.families import (
    Kind,
    Measure,
    NodeFamily,
    base_measure,
    beta,
    binary,
    binomial,
    check_natural_parameter,
    exponential,
    gaussian,
    poisson,
    sample_conditional,
    suff_stats,
)

ALL = [gaussian(), binary(), poisson(), exponential(), beta(), binomial(5)]


def test_k_stats_and_measures():
    assert [f.k_stats for f in ALL] == [2, 1, 1, 1, 2, 1]
    assert [f.measure for f in ALL] == [
        Measure.LEBESGUE, Measure.COUNTING, Measure.COUNTING,
        Measure.LEBESGUE, Measure.LEBESGUE, Measure.COUNTING,
    ]


def test_suff_stats_examples():
    assert_array_equal(suff_stats(gaussian(), 0.0), [0.0, 0.0])
    assert_allclose(suff_stats(gaussian(), 2.0), [-2.0, 2.0])
    assert_allclose(suff_stats(beta(), 0.5), [-0.6931471805599453, -0.6931471805599453])
    assert_array_equal(suff_stats(poisson(), 3), [3.0])
    assert_allclose(base_measure(poisson(), 3), -1.791759469228055)
    assert_array_equal(suff_stats(exponential(), 1.5), [-1.5])
    assert_allclose(base_measure(binomial(5), 2), math.log(10))
    assert base_measure(gaussian(), 1.3) == 0.0


def test_suff_stats_vectorized_shape():
    x = np.linspace(-1, 1, 12).reshape(3, 4)
    assert suff_stats(gaussian(), x).shape == (3, 4, 2)
    assert suff_stats(binary(), np.zeros((5,))).shape == (5, 1)


@pytest.mark.parametrize(
    "family,x",
    [
        (beta(), 0.0), (beta(), 1.0), (binary(), 2), (binary(), 0.5), (poisson(), -1),
        (poisson(), 1.5), (exponential(), -0.1), (binomial(5), 6), (gaussian(), math.inf),
    ],
)
def test_out_of_support(family, x):
    with pytest.raises(OutOfSupport):
        suff_stats(family, x)


@pytest.mark.parametrize(
    "family,theta",
    [(gaussian(), [0.0, 1.0]), (gaussian(), [-1.0, 0.0]), (exponential(), [0.0]),
     (exponential(), [-2.0]), (beta(), [-1.0, 0.5]), (poisson(), [math.nan])],
)
def test_invalid_natural_parameter(family, theta):
    with pytest.raises(InvalidNaturalParameter):
        check_natural_parameter(family, theta)
    with pytest.raises(InvalidNaturalParameter):
        sample_conditional(family, theta, np.random.default_rng(0))


def test_json_roundtrip():
    for fam in ALL:
        assert NodeFamily.from_json(fam.to_json()) == fam
    assert NodeFamily.from_json("binary").kind is Kind.BINARY
    for bad in ["weibull", {"kind": "binomial"}, {"kind": "binomial", "n_trials": 0}, 3]:
        with pytest.raises(SpecFormatError):
            NodeFamily.from_json(bad)


def test_sample_binary_and_poisson_moments():
    rng = np.random.default_rng(1)
    assert abs(sample_conditional(binary(), [0.0], rng, size=100_000).mean() - 0.5) < 0.005
    assert abs(sample_conditional(poisson(), [math.log(2)], rng, size=100_000).mean() - 2.0) < 0.02


def test_sample_gaussian_ar1_conditional():
    phi, left, right = 0.5, 1.2, -0.4
    theta = [1 + phi**2, phi * (left + right)]
    draws = sample_conditional(gaussian(), theta, np.random.default_rng(2), size=200_000)
    assert abs(draws.mean() - phi * (left + right) / (1 + phi**2)) < 0.01
    assert abs(draws.var() - 1 / (1 + phi**2)) < 0.01


@pytest.mark.parametrize(
    "family,theta,dist",
    [
        (gaussian(), [2.0, 1.0], stats.norm(0.5, 1 / math.sqrt(2))),
        (exponential(), [0.7], stats.expon(scale=1 / 0.7)),
        (beta(), [0.5, -0.3], stats.beta(1.5, 0.7)),
        (poisson(), [1.1], stats.poisson(math.exp(1.1))),
        (binary(), [-0.8], stats.bernoulli(1 / (1 + math.exp(0.8)))),
        (binomial(7), [0.4], stats.binom(7, 1 / (1 + math.exp(-0.4)))),
    ],
)
def test_million_draw_cdf_match(family, theta, dist):
    draws = sample_conditional(family, theta, np.random.default_rng(3), size=1_000_000)
    assert np.all(family.in_support(draws))
    if family.discrete:
        support = np.arange(0, int(draws.max()) + 1)
        ecdf = np.cumsum(np.bincount(draws.astype(int))) / len(draws)
        ks = np.max(np.abs(ecdf - dist.cdf(support)))
    else:
        ks = stats.kstest(draws, dist.cdf).statistic
    assert ks < 0.005


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_gaussian_stats_property(xs):
    s = suff_stats(gaussian(), np.array(xs))
    assert_allclose(s[:, 1], xs)
    assert_allclose(s[:, 0], -0.5 * np.square(xs))
    assert_array_equal(s, suff_stats(gaussian(), np.array(xs)))


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-9, 1 - 1e-9))
def test_beta_stats_are_negative(x):
    s = suff_stats(beta(), x)
    assert np.all(s < 0)
    assert_allclose(np.exp(s).sum(), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.data())
def test_binomial_base_measure_property(n, data):
    x = data.draw(st.integers(0, n))
    assert_allclose(base_measure(binomial(n), x), math.log(math.comb(n, x)), atol=1e-10)

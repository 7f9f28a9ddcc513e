import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from npcal import kernels
from npcal.errors import DomainError, ShapeError
from npcal.mathcore import (
    dirichlet_from_uniform,
    dirichlet_sample,
    digamma,
    gamma_icdf_approx,
    gamma_icdf_approx_grad,
    kl_multigamma,
    kl_multigamma_grad,
    log_gamma,
    make_rng,
    softmax,
    trigamma,
)

EULER_GAMMA = 0.57721566490153286


def test_log_gamma_examples():
    assert log_gamma(1.0) == pytest.approx(0.0, abs=1e-14)
    assert log_gamma(2.0) == pytest.approx(0.0, abs=1e-14)
    # factorial oracle: Gamma(5) = 4!
    assert log_gamma(5.0) == pytest.approx(math.log(24.0), rel=1e-12)


@pytest.mark.parametrize("x", [1e-6, 0.01, 0.3, 0.5, 0.7, 1.5, 3.3, 10.0, 57.0, 1e3, 1e6])
def test_log_gamma_matches_stdlib(x):
    assert log_gamma(x) == pytest.approx(math.lgamma(x), rel=1e-10, abs=1e-13)


@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_log_gamma_domain(bad):
    with pytest.raises(DomainError):
        log_gamma(bad)


def _digamma_oracle(x, terms=200000):
    # psi(x) = -gamma + sum_{n>=0} (1/(n+1) - 1/(n+x)); the truncated tail is
    # approximately (x - 1) / N.
    n = np.arange(terms, dtype=np.float64)
    s = np.sum(1.0 / (n + 1.0) - 1.0 / (n + x))
    tail = (x - 1.0) / terms
    return -EULER_GAMMA + s + tail


def test_digamma_examples():
    assert digamma(1.0) == pytest.approx(-0.5772156649, abs=1e-10)
    assert digamma(2.0) == pytest.approx(0.4227843351, abs=1e-10)
    assert digamma(0.5) == pytest.approx(-EULER_GAMMA - 2 * math.log(2.0), abs=1e-10)
    assert digamma(0.5) == pytest.approx(-1.9635100260, abs=1e-9)


@pytest.mark.parametrize("x", [0.05, 0.5, 1.0, 2.5, 7.0, 30.0])
def test_digamma_series_oracle(x):
    assert digamma(x) == pytest.approx(_digamma_oracle(x), rel=1e-8, abs=1e-9)


def test_digamma_recurrence():
    xs = np.linspace(0.1, 15.0, 50)
    np.testing.assert_allclose(digamma(xs + 1), digamma(xs) + 1 / xs, rtol=1e-10, atol=1e-12)


def test_trigamma_is_derivative_of_digamma():
    xs = np.linspace(0.2, 20.0, 40)
    h = 1e-5
    fd = (digamma(xs + h) - digamma(xs - h)) / (2 * h)
    np.testing.assert_allclose(trigamma(xs), fd, rtol=1e-6)


def test_digamma_domain():
    with pytest.raises(DomainError):
        digamma(-0.5)


def test_kernel_paths_agree():
    x = np.geomspace(1e-4, 1e4, 301)
    np.testing.assert_allclose(kernels.lgamma_nb(x), kernels.lgamma_np(x), rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(kernels.digamma_nb(x), kernels.digamma_np(x), rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(kernels.trigamma_nb(x), kernels.trigamma_np(x), rtol=1e-13)
    np.testing.assert_allclose(kernels.lgamma_nb(x), special.gammaln(x), rtol=1e-12, atol=1e-13)


def test_knn_kernel_paths_agree():
    rng = make_rng(5)
    q = rng.standard_normal((40, 3))
    a = rng.standard_normal((60, 3))
    np.testing.assert_array_equal(kernels.knn_indices_nb(q, a, 7), kernels.knn_indices_np(q, a, 7))


# -------------------------------------------------------------------------- icdf


def test_gamma_icdf_examples():
    assert gamma_icdf_approx(0.5, 2.0) == pytest.approx(1.0, rel=1e-12)
    assert gamma_icdf_approx(0.5, 1.0) == pytest.approx(0.5, rel=1e-12)
    assert gamma_icdf_approx(0.2, 0.5) == pytest.approx((0.2 * 0.5 * math.sqrt(math.pi)) ** 2, rel=1e-12)
    assert gamma_icdf_approx(0.2, 0.5) == pytest.approx(0.031416, abs=1e-6)


@pytest.mark.parametrize("u,alpha", [(0.0, 1.0), (1.0, 1.0), (0.5, 0.0), (0.5, -2.0)])
def test_gamma_icdf_domain(u, alpha):
    with pytest.raises(DomainError):
        gamma_icdf_approx(u, alpha)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(1e-6, 1 - 1e-6),
    st.floats(1e-6, 1 - 1e-6),
    st.floats(0.05, 50.0),
)
def test_gamma_icdf_monotone_in_u(u1, u2, alpha):
    if u1 == u2:
        return
    lo, hi = sorted((u1, u2))
    assert gamma_icdf_approx(lo, alpha) < gamma_icdf_approx(hi, alpha)


def test_gamma_icdf_grad_matches_finite_differences():
    rng = make_rng(11)
    alphas = rng.uniform(0.3, 20.0, 200)
    us = rng.uniform(0.01, 0.99, 200)
    h = 1e-6
    fd = (gamma_icdf_approx(us, alphas + h) - gamma_icdf_approx(us, alphas - h)) / (2 * h)
    np.testing.assert_allclose(gamma_icdf_approx_grad(us, alphas), fd, rtol=1e-5)


# -------------------------------------------------------------------------- dirichlet


@pytest.mark.parametrize(
    "alpha,expected",
    [((1.0, 1.0), (0.5, 0.5)), ((2.0, 2.0), (0.5, 0.5)), ((2.0, 1.0), (2 / 3, 1 / 3))],
)
def test_dirichlet_from_uniform_examples(alpha, expected):
    out = dirichlet_from_uniform(np.array(alpha), np.array([0.5, 0.5]))
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_dirichlet_samples_on_simplex():
    rng = make_rng(3)
    alpha = rng.uniform(0.05, 30.0, (500, 6))
    y = dirichlet_sample(alpha, rng)
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)


def test_dirichlet_sample_stream_is_reproducible():
    alpha = np.array([0.7, 2.0, 5.0])
    a = [dirichlet_sample(alpha, r) for r in [make_rng(42)] * 5]
    b = [dirichlet_sample(alpha, r) for r in [make_rng(42)] * 5]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(make_rng(42, 0).random(4), make_rng(42, 1).random(4))


# -------------------------------------------------------------------------- KL


def test_kl_examples():
    assert kl_multigamma([1.0, 1.0], [1.0, 1.0]) == 0.0
    assert kl_multigamma([2.0, 2.0], [1.0, 1.0]) == pytest.approx(2 * (1 - EULER_GAMMA), rel=1e-10)
    assert kl_multigamma([2.0, 2.0], [1.0, 1.0]) == pytest.approx(0.8455687, abs=1e-7)
    assert kl_multigamma([1.0, 1.0], [2.0, 2.0]) == pytest.approx(2 * EULER_GAMMA, rel=1e-10)


def test_kl_shape_error():
    with pytest.raises(ShapeError):
        kl_multigamma([1.0, 2.0], [1.0, 2.0, 3.0])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 100.0), st.floats(0.01, 100.0)), min_size=1, max_size=8))
def test_kl_nonnegative_and_zero_on_diagonal(pairs):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    assert kl_multigamma(a, a) == 0.0
    assert kl_multigamma(a, b) >= -1e-12


def test_kl_monte_carlo_oracle():
    rng = np.random.default_rng(7)
    a_hat = np.array([0.8, 3.0, 7.5])
    a = np.array([2.0, 1.2, 11.0])
    x = rng.gamma(a_hat, 1.0, size=(400_000, 3))
    log_ratio = (a_hat - a) * np.log(x) + special.gammaln(a) - special.gammaln(a_hat)
    mc = log_ratio.sum(axis=1).mean()
    assert kl_multigamma(a_hat, a) == pytest.approx(mc, rel=0.01)


def test_kl_grad_matches_finite_differences():
    rng = make_rng(2)
    a_hat = rng.uniform(0.3, 15.0, 6)
    a = rng.uniform(0.3, 15.0, 6)
    h = 1e-6
    fd = np.empty(6)
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        fd[k] = (kl_multigamma(a_hat + e, a) - kl_multigamma(a_hat - e, a)) / (2 * h)
    np.testing.assert_allclose(kl_multigamma_grad(a_hat, a), fd, rtol=1e-6, atol=1e-9)


# -------------------------------------------------------------------------- softmax


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax([math.log(2.0), 0.0]), [2 / 3, 1 / 3], rtol=1e-14)
    out = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0)


def test_softmax_empty():
    with pytest.raises(ShapeError):
        softmax([])


@given(st.lists(st.floats(-500, 500), min_size=1, max_size=20))
def test_softmax_sums_to_one(v):
    assert softmax(v).sum() == pytest.approx(1.0, abs=1e-12)

import numpy as np
import pytest
from scipy.special import ndtr

from vnngp.errors import ArgumentError
from vnngp.likelihood import (LikelihoodParams, accuracy, expected_log_lik, expected_log_lik_grad,
                              expected_log_lik_quadrature, gauss_hermite, predictive_moments,
                              predictive_nll)

HALF_LOG_2PI = 0.9189385332046727


def test_gaussian_examples():
    lik = LikelihoodParams.gaussian(1.0)
    assert expected_log_lik(lik, (0.0, 0.0), 0.0) == pytest.approx(-0.918939, abs=1e-6)
    assert expected_log_lik(lik, (0.0, 1.0), 0.0) == pytest.approx(-1.418939, abs=1e-6)
    assert predictive_nll(lik, (2.0, 0.0), 2.0) == pytest.approx(HALF_LOG_2PI, abs=1e-12)
    lik = LikelihoodParams.gaussian(0.5)
    assert predictive_nll(lik, (0.0, 0.5), 1.0) == pytest.approx(1.418939, abs=1e-6)


def test_bernoulli_examples():
    lik = LikelihoodParams.bernoulli()
    assert expected_log_lik(lik, (0.0, 0.0), 1.0) == pytest.approx(np.log(0.5), abs=1e-12)
    for v in (0.0, 0.3, 4.0):
        assert predictive_nll(lik, (0.0, v), 1.0) == pytest.approx(-np.log(0.5), abs=1e-12)


def test_bernoulli_predictive_closed_form(rng):
    lik = LikelihoodParams.bernoulli(order=64)
    mu = rng.normal(size=50)
    v = rng.uniform(0, 3, 50)
    y = np.where(rng.random(50) < 0.5, -1.0, 1.0)
    expect = -np.log(ndtr(y * mu / np.sqrt(1 + v)))
    np.testing.assert_allclose(predictive_nll(lik, (mu, v), y), expect, rtol=1e-9)


def test_invalid_values():
    with pytest.raises(ArgumentError):
        LikelihoodParams.gaussian(0.0)
    with pytest.raises(ArgumentError):
        LikelihoodParams.studentt(-1.0)
    with pytest.raises(ArgumentError):
        LikelihoodParams.studentt(1.0, dof=0.0)
    with pytest.raises(ArgumentError):
        expected_log_lik(LikelihoodParams.bernoulli(), (0.0, 1.0), 0.5)


def test_hermgauss_oracle(rng):
    # independent 64-node rule from numpy with the change of variables written out
    t, w = np.polynomial.hermite.hermgauss(64)
    mu = rng.uniform(-5, 5, 200)
    v = rng.uniform(0, 10, 200)
    s2 = rng.uniform(0.01, 10, 200)
    y = rng.normal(size=200)
    f = mu[:, None] + np.sqrt(2 * v)[:, None] * t
    quad = (-0.5 * (np.log(2 * np.pi * s2)[:, None] + (y[:, None] - f) ** 2 / s2[:, None])) @ w / np.sqrt(np.pi)
    closed = np.array([expected_log_lik(LikelihoodParams.gaussian(s), (a, b), c)
                       for a, b, s, c in zip(mu, v, s2, y)])
    assert np.max(np.abs(closed - quad)) < 1e-8


def test_jensen_gap_is_exact(rng):
    for _ in range(20):
        s2, mu, v, y = rng.uniform(0.1, 3), rng.normal(), rng.uniform(0, 4), rng.normal()
        lik = LikelihoodParams.gaussian(s2)
        gap = expected_log_lik(lik, (mu, 0.0), y) - expected_log_lik(lik, (mu, v), y)
        assert gap == pytest.approx(v / (2 * s2), rel=1e-12)


def test_quadrature_invariant_under_doubling(rng):
    mu = rng.uniform(-5, 5, 500)
    v = rng.uniform(0, 10, 500)
    s2 = rng.uniform(0.01, 10, 500)
    y = rng.normal(size=500)
    for a, b, s, c in zip(mu[:100], v[:100], s2[:100], y[:100]):
        lik = LikelihoodParams.gaussian(s)
        q20 = expected_log_lik_quadrature(lik, (a, b), c)
        q40 = expected_log_lik_quadrature(lik, (a, b), c, order=40)
        assert abs(q20 - q40) < 1e-10
        assert abs(q20 - expected_log_lik(lik, (a, b), c)) < 1e-8


@pytest.mark.parametrize("kind,tol", [("bernoulli", 5e-4), ("studentt", 5e-2)])
def test_nongaussian_quadrature_convergence_levels(kind, tol, rng):
    # measured Q=20 vs Q=40 gaps on |mu| <= 5, v <= 10: about 2.5e-4 (probit), 2.7e-2 (Student-t)
    mu = rng.uniform(-5, 5, 1000)
    v = rng.uniform(0, 10, 1000)
    if kind == "bernoulli":
        y = np.where(rng.random(1000) < 0.5, -1.0, 1.0)
        lik = LikelihoodParams.bernoulli()
    else:
        y = rng.normal(size=1000)
        lik = LikelihoodParams.studentt(0.7)
    gaps = [np.max(np.abs(expected_log_lik_quadrature(lik, (mu, v), y, order=Q)
                          - expected_log_lik_quadrature(lik, (mu, v), y, order=2 * Q)))
            for Q in (20, 40, 80)]
    assert gaps[0] < tol
    assert gaps[0] > gaps[1] > gaps[2]
    np.testing.assert_allclose(expected_log_lik(lik, (mu, v), y),
                               expected_log_lik_quadrature(lik, (mu, v), y), rtol=0, atol=1e-12)


def test_gauss_hermite_moments():
    x, w = gauss_hermite(20)
    assert np.sum(w) == pytest.approx(1.0, abs=1e-14)
    assert np.sum(w * x * x) == pytest.approx(1.0, abs=1e-13)


@pytest.mark.parametrize("lik", [LikelihoodParams.gaussian(0.4), LikelihoodParams.bernoulli(),
                                 LikelihoodParams.studentt(0.8)], ids=["gaussian", "bernoulli", "studentt"])
def test_gradients_match_finite_differences(lik, rng):
    n = 12
    mu = rng.normal(size=n)
    v = rng.uniform(0.1, 2.0, n)
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0) if lik.kind == "bernoulli" else rng.normal(size=n)
    val, gm, gv, graw = expected_log_lik_grad(lik, mu, v, y)
    h = 1e-5

    def f(mu_, v_, l_=lik):
        return expected_log_lik_grad(l_, mu_, v_, y)[0]

    np.testing.assert_allclose(gm, (f(mu + h, v) - f(mu - h, v)) / (2 * h), rtol=1e-4, atol=1e-8)
    np.testing.assert_allclose(gv, (f(mu, v + h) - f(mu, v - h)) / (2 * h), rtol=1e-4, atol=1e-8)
    if lik.trainable:
        fd = (f(mu, v, lik.with_raw(lik.raw_param + h)) - f(mu, v, lik.with_raw(lik.raw_param - h))) / (2 * h)
        np.testing.assert_allclose(graw, fd, rtol=1e-4, atol=1e-8)


def test_predictive_moments_and_accuracy():
    lik = LikelihoodParams.gaussian(0.3)
    m, v = predictive_moments(lik, (np.array([1.0]), np.array([0.2])))
    assert m[0] == 1.0 and v[0] == pytest.approx(0.5)
    m, v = predictive_moments(LikelihoodParams.bernoulli(), (np.array([0.0]), np.array([1.0])))
    assert m[0] == 0.0 and v[0] == pytest.approx(1.0)
    assert accuracy((np.array([1.0, -1.0, 2.0]), np.ones(3)), np.array([1.0, -1.0, -1.0])) == pytest.approx(2 / 3)


def test_dict_round_trip():
    for lik in (LikelihoodParams.gaussian(0.123), LikelihoodParams.bernoulli(),
                LikelihoodParams.studentt(0.5, dof=3.0)):
        back = LikelihoodParams.from_dict(lik.to_dict())
        assert (back.kind, back.dof, back.order) == (lik.kind, lik.dof, lik.order)
        if lik.trainable:
            assert back.value == pytest.approx(lik.value, rel=1e-15)

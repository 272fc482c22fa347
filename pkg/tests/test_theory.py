import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from iqfed import theory
from iqfed.theory import (
    LinearModelSpec,
    SmoothedSgdState,
    StateError,
    lemma1_bound,
    lemma1_bracket,
    lemma1_limit,
    linear_grad,
    linear_loss,
    mc_gradient_variance,
    mc_separability,
    normalizer,
    project_grad,
    q_function,
    random_separable_instance,
    regret_track,
    run_smoothed_sgd,
    smoothed_step,
    theorem1_bound,
    theorem2_prob_bound,
)


def spec(m=2, gamma=10.0, lam=0.1, R=1.0, P=1.0, B=2.0):
    return LinearModelSpec(m, m, R, lam, P, B, gamma)


# ---------------------------------------------------------------- loss and gradient


def test_loss_examples():
    assert linear_loss(np.zeros((2, 2)), np.ones(2), 0.3) == 0.0
    assert linear_loss(np.eye(2), np.array([1.0, 0.0]), 0.0) == -0.5
    th = np.array([[1.0, 2.0], [3.0, -1.0]])
    assert linear_loss(th, np.zeros(2), 0.4) == pytest.approx(0.2 * 15)


def test_grad_examples():
    np.testing.assert_array_equal(linear_grad(np.eye(2), np.array([1.0, 0.0]), 0.0), -np.outer([1, 0], [1, 0]))
    th = np.array([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_array_equal(linear_grad(th, np.zeros(2), 0.5), 0.5 * th)


@given(st.integers(0, 2**32), st.integers(1, 5), st.integers(1, 5), st.floats(0, 2))
def test_grad_matches_finite_differences(seed, m, m_out, lam):
    rng = np.random.default_rng(seed)
    th, r = rng.normal(size=(m_out, m)), rng.normal(size=m)
    g = linear_grad(th, r, lam)
    # the loss is quadratic in theta, so central differences are exact up to rounding
    h = 1e-3
    num = np.empty_like(th)
    for idx in np.ndindex(th.shape):
        e = np.zeros_like(th)
        e[idx] = h
        num[idx] = (linear_loss(th + e, r, lam) - linear_loss(th - e, r, lam)) / (2 * h)
    assert np.max(np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-6)) < 1e-8


def test_projection():
    g = np.array([[0.3, 0.4]])
    out, err = project_grad(g, 1.0)
    assert out is g and err == 0
    out, err = project_grad(np.array([[6.0, 8.0]]), 5.0)
    assert np.linalg.norm(out) == pytest.approx(5.0) and err == pytest.approx(5.0)
    np.testing.assert_allclose(out / np.linalg.norm(out), [[0.6, 0.8]])
    with pytest.raises(ValueError):
        project_grad(g, 0.0)


@given(arrays(np.float64, (2, 3), elements=st.floats(-100, 100)), st.floats(0.1, 10), st.floats(0.1, 10))
def test_projection_homogeneous(g, radius, scale):
    a, _ = project_grad(g, radius)
    b, _ = project_grad(scale * g, scale * radius)
    np.testing.assert_allclose(b, scale * a, rtol=1e-10, atol=1e-10)


# ---------------------------------------------------------------- signal law


def test_truncated_moments_and_B():
    s = LinearModelSpec.truncated(4, 1.0, 0.1, 10.0)
    assert s.B == pytest.approx(22.64, abs=0.01)
    x = theory.sample_signal(s, 200_000, np.random.default_rng(0))
    assert np.max(np.abs(x)) <= 3 / math.sqrt(stats.truncnorm(-3, 3).var()) + 1e-12
    assert np.mean(x**2) == pytest.approx(1.0, rel=0.01)
    # independent oracle for the variance of the standard truncated normal
    assert theory.truncated_moments(3.0, 2.5)[2] == pytest.approx(2.5, rel=1e-12)
    assert theory.truncated_moments(3.0)[4] == pytest.approx(stats.truncnorm(-3, 3).moment(4) / stats.truncnorm(-3, 3).var() ** 2, rel=1e-10)


def test_spec_validation():
    for bad in (dict(R=0), dict(P=0), dict(B=0), dict(gamma=0), dict(lam=-1)):
        with pytest.raises(ValueError):
            spec(**bad)


# ---------------------------------------------------------------- smoothed SGD


def _state(theta, window=1, kappa=1 - 1e-6, eta=0.1, R=1.0, lam=0.1, radius=1e3):
    return SmoothedSgdState(theta, eta, window, kappa, radius, R, lam)


def test_window_one_is_projected_sgd():
    rng = np.random.default_rng(1)
    th = rng.uniform(-1, 1, (3, 3))
    r = rng.normal(size=(1, 3))
    state = smoothed_step(_state(th.copy(), radius=0.5), r)
    g, _ = project_grad(linear_grad(th, r[0], 0.1), 0.5)
    assert state.theta.tobytes() == np.clip(th - 0.1 * g, -1, 1).tobytes()


def test_zero_gradient_keeps_theta():
    th = np.random.default_rng(2).uniform(-1, 1, (2, 2))
    state = _state(th.copy(), window=4, lam=0.0)
    for _ in range(5):
        smoothed_step(state, np.zeros((3, 2)))
    assert state.theta.tobytes() == th.tobytes()


def test_single_client_aggregation_identity():
    rng = np.random.default_rng(3)
    th = rng.uniform(-1, 1, (2, 2))
    r = rng.normal(size=(1, 2))
    s = smoothed_step(_state(th.copy(), window=3), r)
    s2 = smoothed_step(_state(th.copy(), window=3), np.repeat(r, 4, axis=0))
    np.testing.assert_allclose(s.theta, s2.theta, rtol=1e-15, atol=1e-15)


@given(st.integers(0, 2**32), st.integers(1, 6), st.floats(0.5, 1.0))
def test_iterates_stay_in_box(seed, window, kappa):
    rng = np.random.default_rng(seed)
    state = _state(rng.uniform(-1, 1, (2, 3)), window=window, kappa=kappa, eta=5.0)
    for _ in range(12):
        smoothed_step(state, rng.normal(0, 3, (2, 3)))
        assert np.all(np.abs(state.theta) <= 1.0)
        assert len(state.history) <= window


def test_normalizer_exact():
    assert normalizer(3, 0.5) == 1.75
    assert normalizer(1, 0.3) == 1.0
    assert _state(np.zeros((1, 1)), window=5, kappa=0.5).W == math.fsum(0.5**j for j in range(5))


def test_regret_examples():
    with pytest.raises(StateError):
        regret_track(_state(np.zeros((2, 2))))
    rng = np.random.default_rng(4)
    th = rng.uniform(-1, 1, (2, 2))
    r = rng.normal(size=(3, 2))
    s = smoothed_step(_state(th.copy()), r)
    rec = regret_track(s)
    np.testing.assert_allclose(rec.client_regret, [linear_loss(th, ri, 0.1) for ri in r])
    assert rec.regret == pytest.approx(rec.client_regret.mean())
    # equal buffered losses give S equal to that value for any kappa
    s = _state(np.zeros((2, 2)), window=4, kappa=0.3, lam=0.0)
    for _ in range(6):
        smoothed_step(s, np.zeros((2, 2)))
    assert regret_track(s).regret == 0.0


def test_state_validation():
    with pytest.raises(ValueError):
        _state(np.zeros((1, 1)), window=0)
    with pytest.raises(ValueError):
        _state(np.zeros((1, 1)), kappa=1.5)


# ---------------------------------------------------------------- variance and convergence bounds


def test_lemma1_limit_example():
    s = LinearModelSpec(4, 4, 1.0, 0.0, 1.0, 2.0, 1e300)
    assert lemma1_limit(s) == 32
    assert lemma1_bound(s) == pytest.approx(32, rel=1e-12)


def test_lemma1_monotone_in_gamma_and_lambda_terms():
    gammas = np.logspace(-2, 6, 40)
    vals = [lemma1_bound(spec(m=4, gamma=g)) for g in gammas]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    with_lam = lemma1_bracket(spec(lam=0.7))
    no_lam = lemma1_bracket(spec(lam=0.0))
    s = spec(lam=0.7)
    extra = 2 * 0.7 * s.R**2 * ((s.m - 1) * s.B + s.P + s.P / s.gamma) + 0.7**2 * s.R**2
    assert with_lam - no_lam == pytest.approx(extra, rel=1e-12)


def test_theorem1_examples():
    s = LinearModelSpec(2, 2, 1.0, 0.0, 1.0, 1.0, 1e300)
    b = theorem1_bound(1.0, 1.0, 64.0, s, 0.0)
    assert b["simplified"] == pytest.approx(1.125, rel=1e-12)
    assert b["full"] == pytest.approx(b["simplified"], rel=1e-9)
    s2 = spec(gamma=10.0, lam=0.1)
    big = theorem1_bound(1.0, 1.0, 1e12, s2, 0.0)
    assert big["full"] < 1e-9
    with pytest.raises(ValueError):
        theorem1_bound(0.0, 1.0, 1.0, s2, 0.0)


def test_mc_variance_zero_cases():
    s = LinearModelSpec.truncated(3, 1.0, 0.4, 1e300)
    th = np.random.default_rng(0).uniform(-1, 1, (3, 3))
    est = mc_gradient_variance(s, th, 1000, np.random.default_rng(1), constant_signal=True)
    assert np.max(est.variance) < 1e-20
    est = mc_gradient_variance(LinearModelSpec.truncated(3, 1.0, 0.4, 10.0), np.zeros((3, 3)), 1000, np.random.default_rng(1))
    assert np.all(est.variance == 0)
    with pytest.raises(ValueError):
        mc_gradient_variance(s, np.full((3, 3), 2.0), 10, np.random.default_rng(0))


@given(st.integers(0, 2**32), st.sampled_from([2, 3, 4]), st.sampled_from([1.0, 10.0, 1000.0]), st.sampled_from([0.0, 0.1, 1.0]))
def test_mc_variance_below_lemma1(seed, m, gamma, lam):
    rng = np.random.default_rng(seed)
    s = LinearModelSpec.truncated(m, 1.0, lam, gamma)
    th = rng.uniform(-1, 1, (m, m))
    est = mc_gradient_variance(s, th, 20_000, rng)
    assert np.all(est.variance <= lemma1_bound(s) + 3 * est.se)


def test_smoothed_run_below_theorem1():
    s = LinearModelSpec.truncated(4, 1.0, 0.1, 10.0)
    for w in (1, 8):
        run = run_smoothed_sgd(s, 300, w, np.random.default_rng(w))
        assert run.mean_grad_norm_sq <= run.bound["full"]
        assert run.W == pytest.approx(normalizer(w, 1 - 1e-6))
        assert run.beta == pytest.approx(abs(0.1 - 1.0 - 0.1))


# ---------------------------------------------------------------- separability under encoder noise


def test_q_function():
    assert q_function(0.0) == 0.5
    assert q_function(1.959964) == pytest.approx(0.025, abs=1e-6)
    xs = np.linspace(-8, 8, 101)
    np.testing.assert_allclose(q_function(xs) + q_function(-xs), 1.0, atol=1e-15)
    np.testing.assert_allclose(q_function(xs), stats.norm.sf(xs), atol=1e-15)


def test_theorem2_examples():
    worst, prod = theorem2_prob_bound([1.0, 1.0, 1.0], 0.5, 1.0, math.inf)
    assert worst == prod == 1.0
    worst, prod = theorem2_prob_bound([0.5] * 5, 0.5, 1.0, 10.0)
    assert prod == pytest.approx(2.0**-5) and worst == pytest.approx(2.0**-5)
    with pytest.raises(ValueError):
        theorem2_prob_bound([1.0], 0.5, 1.0, 0.0)


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-2, 5)), st.floats(0.1, 100), st.floats(0.1, 100))
def test_theorem2_orderings(margins, g1, g2):
    lo, hi = sorted((g1, g2))
    w_lo, p_lo = theorem2_prob_bound(margins, 0.5, 2.0, lo)
    w_hi, p_hi = theorem2_prob_bound(margins, 0.5, 2.0, hi)
    assert w_lo <= p_lo + 1e-15 and w_hi <= p_hi + 1e-15
    slack_min = margins.min() - 0.5
    if slack_min >= 0:
        assert w_lo <= w_hi + 1e-15
        assert p_lo <= p_hi + 1e-15
    w_more, _ = theorem2_prob_bound(margins, 0.5, 2.0, hi, L=margins.size + 3)
    assert w_more <= w_hi + 1e-15


def test_mc_separability_single_point_zero_slack():
    p, se = mc_separability([[0.5]], [1.0], np.array([1.0]), 0.0, 0.5, 1.0, 4.0, 20_000, np.random.default_rng(0))
    assert abs(p - 0.5) <= 3 * se


def test_mc_separability_huge_snr_and_errors():
    rng = np.random.default_rng(1)
    x, y, th, b, rho = random_separable_instance(rng, 8, 3)
    assert mc_separability(x, y, th, b, 0.5, rho, 1e30, 1000, rng)[0] == 1.0
    with pytest.raises(ValueError):
        mc_separability(x, -y, th, b, 0.5, rho, 1.0, 10, rng)
    with pytest.raises(ValueError):
        mc_separability(x, y, 2 * th, b, 0.5, rho, 1.0, 10, rng)


@pytest.mark.parametrize("seed", range(3))
def test_mc_separability_above_bound(seed):
    rng = np.random.default_rng(seed)
    x, y, th, b, rho = random_separable_instance(rng, 10, 4)
    _, prod = theorem2_prob_bound(y * (x @ th + b), 0.5, rho, 5.0)
    p, se = mc_separability(x, y, th, b, 0.5, rho, 5.0, 5000, rng)
    assert p >= prod - 3 * se

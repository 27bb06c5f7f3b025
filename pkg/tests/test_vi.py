import math

import numpy as np
import pytest
from scipy.special import gammaln

from smoge.data import Dataset, DgpSpec, empty_dataset, sample_dgp
from smoge.experts import get_family
from smoge.model import theta_size
from smoge.vi import (FitAborted, FitConfig, FitResult, PriorConfig, VariationalState, elbo_estimate,
                      elbo_gradient, fit, log_joint, log_joint_grad)

IG_AT_ONE = math.log(4.0) - 2.0


def fd_relative_error(q, data, prior, S, seed, h=1e-5):
    gm, gs = elbo_gradient(q, data, prior, S, seed)
    g = np.concatenate([gm, gs])
    P = q.mean.shape[0]
    fd = np.empty_like(g)
    for i in range(2 * P):
        vals = []
        for delta in (h, -h):
            m, s = q.mean.copy(), q.log_std.copy()
            (m if i < P else s)[i % P] += delta
            vals.append(elbo_estimate(VariationalState(m, s, q.K, q.d, q.family), data, prior, S, seed)[0])
        fd[i] = (vals[0] - vals[1]) / (2 * h)
    return float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6)))


def random_instance(rng, family, K, d=2, n=5):
    P = theta_size(K, d, get_family(family).n_params(d))
    q = VariationalState(rng.normal(0, 0.5, P), rng.normal(-1, 0.3, P), K, d, family)
    return q, Dataset(rng.uniform(-1, 1, (n, d)), rng.normal(size=n))


# log joint

def test_prior_only_golden_value():
    K, d = 2, 1
    theta = np.zeros(theta_size(K, d, 2))
    expected = 8 * (-0.5 * math.log(2 * math.pi * 10.0)) + K * IG_AT_ONE
    assert log_joint(theta, empty_dataset(d), K) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(-17.78925992, abs=1e-6)


def test_log_joint_additive(rng):
    K, d = 2, 2
    theta = rng.normal(size=theta_size(K, d, 3))
    a = Dataset(rng.uniform(-1, 1, (4, d)), rng.normal(size=4))
    b = Dataset(rng.uniform(-1, 1, (6, d)), rng.normal(size=6))
    prior = log_joint(theta, empty_dataset(d), K)
    both = log_joint(theta, a.concat(b), K)
    assert both - prior == pytest.approx((log_joint(theta, a, K) - prior) + (log_joint(theta, b, K) - prior),
                                         rel=1e-12)


def test_gating_prior_variance_doubling():
    K, d = 2, 1
    theta = np.zeros(theta_size(K, d, 2))
    base = log_joint(theta, empty_dataset(d), K, prior=PriorConfig(gating_var=10.0))
    doubled = log_joint(theta, empty_dataset(d), K, prior=PriorConfig(gating_var=20.0))
    n_gating = K * (1 + d)
    assert base - doubled == pytest.approx(n_gating * 0.5 * math.log(2.0), abs=1e-12)


def test_log_joint_rejects_non_finite():
    theta = np.zeros(4)
    theta[0] = np.nan
    with pytest.raises(ValueError):
        log_joint(theta, empty_dataset(1), 1)


@pytest.mark.parametrize("family", ["linear", "sigmoid", "constant"])
def test_log_joint_gradient_finite_differences(family, rng):
    q, data = random_instance(rng, family, 3)
    theta = q.mean
    _, g = log_joint_grad(theta, data, 3, family)
    h = 1e-6
    for i in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[i] = h
        fd = (log_joint(theta + e, data, 3, family) - log_joint(theta - e, data, 3, family)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-7)


# ELBO

def test_elbo_deterministic():
    rng = np.random.default_rng(1)
    q, data = random_instance(rng, "linear", 2)
    assert elbo_estimate(q, data, S=1, seed=3)[0] == elbo_estimate(q, data, S=1, seed=3)[0]


def test_point_mass_limit(rng):
    q, data = random_instance(rng, "linear", 2)
    q = VariationalState(q.mean, np.full_like(q.log_std, -20.0), q.K, q.d, q.family)
    val, se = elbo_estimate(q, data, S=50, seed=0)
    entropy = np.sum(0.5 * math.log(2 * math.pi * math.e) + q.log_std)
    assert val == pytest.approx(log_joint(q.mean, data, q.K) + entropy, abs=1e-6)
    assert se < 1e-6


def _prior_matched(K, d, m_u=0.3, s_u=0.4):
    P = theta_size(K, d, d + 1)
    mean = np.zeros(P)
    log_std = np.full(P, 0.5 * math.log(10.0))
    mean[-K:] = m_u
    log_std[-K:] = math.log(s_u)
    return VariationalState(mean, log_std, K, d, "linear")


def test_prior_matched_gaussian_blocks_contribute_zero():
    K, d, a, b = 2, 1, 2.0, 2.0
    m, s = 0.3, 0.4
    q = _prior_matched(K, d, m, s)
    val, se = elbo_estimate(q, empty_dataset(d), S=4000, seed=2)
    ig_part = a * math.log(b) - gammaln(a) - a * m - b * math.exp(-m + s * s / 2)
    entropy = 0.5 * math.log(2 * math.pi * math.e * s * s)
    assert abs(val - K * (ig_part + entropy)) < 3 * se


def test_prior_matched_gradients_vanish():
    K, d = 2, 1
    q = _prior_matched(K, d)
    draws = [elbo_gradient(q, empty_dataset(d), S=1, seed=s) for s in range(400)]
    gm = np.array([g[0] for g in draws])[:, :-K]
    gs = np.array([g[1] for g in draws])[:, :-K]
    for arr in (gm, gs):
        mean = arr.mean(axis=0)
        se = arr.std(axis=0, ddof=1) / math.sqrt(arr.shape[0])
        assert np.all(np.abs(mean) < 3.5 * se)


def test_slope_gradient_with_zero_response(rng):
    # with y = 0 and all expert means 0 the residual term has no first-order pull on slopes
    K, d = 1, 2
    P = theta_size(K, d, d + 1)
    q = VariationalState(np.zeros(P), np.full(P, -30.0), K, d, "linear")
    data = Dataset(rng.uniform(-1, 1, (10, d)), np.zeros(10))
    gm, _ = elbo_gradient(q, data, S=1, seed=0)
    gm_prior, _ = elbo_gradient(q, empty_dataset(d), S=1, seed=0)
    beta = slice(K + K * d, K + K * d + K * (d + 1))
    np.testing.assert_allclose(gm[beta], gm_prior[beta], atol=1e-10)


@pytest.mark.parametrize("family", ["linear", "sigmoid", "constant"])
def test_pathwise_gradient_matches_finite_differences(family):
    rng = np.random.default_rng({"linear": 0, "sigmoid": 1, "constant": 2}[family])
    for K in (1, 2, 3):
        q, data = random_instance(rng, family, K)
        assert fd_relative_error(q, data, PriorConfig(), S=3, seed=K) < 1e-4


# fitting

def test_single_iteration_trace():
    data = sample_dgp(DgpSpec.b2(), 20, 0)
    res = fit(data, 2, cfg=FitConfig(iterations=1))
    assert res.elbo_trace.shape == (1,)


def test_fit_deterministic_and_backends_agree():
    data = sample_dgp(DgpSpec.b2(), 40, 0)
    cfg = FitConfig(iterations=300, learning_rate=0.02, seed=5)
    a, b = fit(data, 2, cfg=cfg), fit(data, 2, cfg=cfg)
    assert np.array_equal(a.final_state.mean, b.final_state.mean) and a.final_elbo == b.final_elbo
    c = fit(data, 2, cfg=cfg, backend="numpy")
    np.testing.assert_allclose(c.final_state.mean, a.final_state.mean, atol=1e-10)
    np.testing.assert_allclose(c.elbo_trace, a.elbo_trace, rtol=1e-10)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_aborts_with_diagnostic():
    data = sample_dgp(DgpSpec.b2(), 40, 0)
    with pytest.raises(FitAborted) as info:
        fit(data, 2, cfg=FitConfig(iterations=200, learning_rate=1e4))
    assert info.value.iteration >= 1 and info.value.block


def test_single_gaussian_recovery():
    rng = np.random.default_rng(3)
    n = 2000
    x = rng.uniform(-1, 1, (n, 1))
    y = 1.0 + 0.5 * x[:, 0] + 0.5 * rng.standard_normal(n)
    res = fit(Dataset(x, y), 1, cfg=FitConfig(iterations=3000, learning_rate=0.02, lr_final=0.001, seed=0))
    beta_mean, beta_log_std = res.final_state.block("beta")
    sd = np.exp(beta_log_std)
    assert np.all(np.abs(beta_mean - [1.0, 0.5]) < 3 * np.maximum(sd, 0.5 / math.sqrt(n)))
    assert res.point_estimate.sigma2[0] == pytest.approx(0.25, rel=0.1)


def test_elbo_trend_on_paper_regime():
    data = sample_dgp(DgpSpec.b4(5.0, 2, 2), 500, 0)
    res = fit(data, 2, cfg=FitConfig(iterations=800, learning_rate=0.1 + 0.000015 * 500 + 0.002))
    smooth = np.convolve(res.elbo_trace, np.ones(200) / 200, mode="valid")
    assert smooth[-1] >= res.elbo_trace[99]


def test_point_estimate_uses_log_variance_mean():
    data = sample_dgp(DgpSpec.b2(), 30, 1)
    res = fit(data, 2, cfg=FitConfig(iterations=50))
    np.testing.assert_allclose(res.point_estimate.sigma2, np.exp(res.final_state.block("log_sigma2")[0]))


def test_fit_result_serialisation(tmp_path):
    import json
    data = sample_dgp(DgpSpec.b2(), 30, 1)
    res = fit(data, 2, cfg=FitConfig(iterations=250))
    res.to_json(tmp_path / "f.json")
    rec = json.loads((tmp_path / "f.json").read_text())
    assert len(rec["elbo_trace"]) == 3 and rec["config"]["iterations"] == 250
    back = VariationalState.from_dict(rec["variational"])
    assert np.array_equal(back.mean, res.final_state.mean)


@pytest.mark.slow
def test_b2_two_experts_beat_one():
    wins = 0
    for seed in range(20):
        data = sample_dgp(DgpSpec.b2(), 100, 1000 + seed)
        elbos = [fit(data, K, cfg=FitConfig(iterations=10_000, learning_rate=lr, seed=seed)).final_elbo
                 for K, lr in ((1, 0.0072), (2, 0.006))]
        wins += elbos[1] > elbos[0]
    assert wins >= 16

import math

import numpy as np
import pytest
from scipy.stats import norm

from conftest import random_measure
from smoge.divergences import hellinger_sq_mc, kl_mc, l1_norm_mc
from smoge.model import MixingMeasure

HELLINGER_SHIFT1 = 2.0 * (1.0 - math.exp(-1.0 / 8.0))
L1_SHIFT1 = 2.0 * (2.0 * norm.cdf(0.5) - 1.0)


def const(mean, sigma2=1.0, d=1):
    return MixingMeasure([0.0], np.zeros((1, d)), [[mean]], [sigma2], family="constant")


def test_closed_forms_are_what_we_think():
    assert HELLINGER_SHIFT1 == pytest.approx(0.23501, abs=1e-5)
    assert L1_SHIFT1 == pytest.approx(0.765850, abs=1e-6)


@pytest.mark.parametrize("fn", [hellinger_sq_mc, kl_mc, l1_norm_mc])
def test_identical_measures_give_zero(fn, rng):
    G = random_measure(rng, 3, 2)
    est = fn(G, G, n_mc=20_000, seed=1)
    assert abs(est.value) <= 3 * est.std_error + 1e-12


def test_shifted_gaussian_golden_values():
    a, b = const(0.0), const(1.0)
    for fn, target in ((hellinger_sq_mc, HELLINGER_SHIFT1), (kl_mc, 0.5), (l1_norm_mc, L1_SHIFT1)):
        est = fn(a, b, n_mc=200_000, seed=5)
        assert abs(est.value - target) < 3 * est.std_error


def test_near_singular_pair():
    a = MixingMeasure([0.0], [[0.0]], [[-30.0]], [1e-3], family="constant")
    b = MixingMeasure([0.0], [[0.0]], [[30.0]], [1e-3], family="constant")
    assert hellinger_sq_mc(a, b, n_mc=10_000).value > 1.99
    assert l1_norm_mc(a, b, n_mc=10_000).value > 1.99


def test_kl_asymmetry():
    a, b = const(0.0, 1.0), const(0.0, 4.0)
    exact_ab = 0.5 * (1 / 4 + math.log(4) - 1)
    exact_ba = 0.5 * (4 - math.log(4) - 1)
    ab, ba = kl_mc(a, b, 200_000, 1), kl_mc(b, a, 200_000, 1)
    assert abs(ab.value - exact_ab) < 3 * ab.std_error
    assert abs(ba.value - exact_ba) < 3 * ba.std_error
    assert abs(ab.value - ba.value) > 3 * (ab.std_error + ba.std_error)


def test_kl_stays_finite_for_far_apart_measures():
    # log-space evaluation: no underflow even when g2 is astronomically small
    a = MixingMeasure([0.0], [[0.0]], [[-1000.0]], [1e-3], family="constant")
    b = MixingMeasure([0.0], [[0.0]], [[1000.0]], [1e-3], family="constant")
    est = kl_mc(a, b, n_mc=100)
    assert not est.infinite
    assert est.value == pytest.approx(2000.0**2 / (2 * 1e-3), rel=1e-3)


def test_argument_errors(rng):
    G = random_measure(rng, 2, 2)
    with pytest.raises(ValueError):
        hellinger_sq_mc(G, G, n_mc=0)
    with pytest.raises(ValueError):
        hellinger_sq_mc(G, random_measure(rng, 2, 3))


def test_standard_error_scaling():
    a, b = const(0.0), const(1.0)
    se1 = hellinger_sq_mc(a, b, 50_000, seed=2).std_error
    se4 = hellinger_sq_mc(a, b, 200_000, seed=2).std_error
    assert 1 / 1.5 < (se1 / se4) / 2.0 < 1.5


def test_deterministic_and_shardable(rng):
    G1, G2 = random_measure(rng, 2, 2), random_measure(rng, 3, 2)
    a = hellinger_sq_mc(G1, G2, 10_000, seed=9)
    b = hellinger_sq_mc(G1, G2, 10_000, seed=9)
    assert a.value == b.value and a.std_error == b.std_error
    s = hellinger_sq_mc(G1, G2, 10_000, seed=9, shards=4)
    assert s.n_samples == 10_000
    assert abs(s.value - a.value) < 4 * (a.std_error + s.std_error)


def test_inequality_chain_and_symmetry(rng):
    for _ in range(200):
        K1, K2 = rng.integers(1, 4, size=2)
        G1, G2 = random_measure(rng, K1, 2), random_measure(rng, K2, 2)
        seed = int(rng.integers(1 << 30))
        h = hellinger_sq_mc(G1, G2, 4_000, seed)
        l1 = l1_norm_mc(G1, G2, 4_000, seed)
        kl = kl_mc(G1, G2, 4_000, seed)
        assert 0.0 <= h.value <= 2.0 and 0.0 <= l1.value <= 2.0
        assert kl.value >= -3 * kl.std_error
        assert h.value <= l1.value + 6 * (h.std_error + l1.std_error)
        assert h.value <= kl.value + 6 * (h.std_error + kl.std_error)
        h2 = hellinger_sq_mc(G2, G1, 4_000, seed + 1)
        assert abs(h.value - h2.value) <= 3 * (h.std_error + h2.std_error) + 1e-12

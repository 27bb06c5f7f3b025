import numpy as np
import pytest

from conftest import random_measure
from smoge.data import B2_BETA, B2_SIGMA2
from smoge.identifiability import (UnsupportedOrderError, check_assumption4, feature_matrix,
                                   strong_identifiability_test)
from smoge.model import MixingMeasure, normalize_gating, translate_gating
from smoge.voronoi import loss_l1

CANONICAL = [("linear", 1, "identifiable"), ("linear", 2, "degenerate"),
             ("sigmoid", 2, "identifiable"), ("constant", 1, "degenerate")]


@pytest.mark.parametrize("family,order,verdict", CANONICAL)
def test_canonical_verdicts(family, order, verdict):
    for seed in range(10):
        rep = strong_identifiability_test(family, order=order, d=2, seed=seed)
        assert rep.verdict == verdict
        assert rep.identifiable == (verdict == "identifiable")


@pytest.mark.parametrize("family,order,verdict", CANONICAL)
def test_verdicts_stable_in_n_x(family, order, verdict):
    for seed in range(10):
        a = strong_identifiability_test(family, order=order, d=2, seed=seed, n_x=200)
        b = strong_identifiability_test(family, order=order, d=2, seed=seed, n_x=400)
        assert not (a.identifiable and not b.identifiable)


def test_sigmoid_order_one_and_higher_dimension():
    assert strong_identifiability_test("sigmoid", order=1, d=3).identifiable
    assert strong_identifiability_test("sigmoid", order=2, d=3, n_x=800).identifiable


def test_linear_second_order_dependence_is_exact():
    # d^2E/dbeta^2 vanishes and X^(u) dE/dbeta^(v) is symmetric in (u, v)
    rep = strong_identifiability_test("linear", [1.0, 2.0, -1.0], order=2)
    assert rep.min_singular_value < 1e-12 * rep.max_singular_value


def test_threshold_rule():
    rep = strong_identifiability_test("sigmoid", order=2, d=2, seed=3)
    assert rep.identifiable == (rep.min_singular_value > rep.threshold * rep.max_singular_value)


def test_second_order_columns_deduplicated():
    x = np.random.default_rng(0).uniform(-1, 1, size=(50, 2))
    F = feature_matrix("sigmoid", [1.0, -0.5], x, order=2)
    # 2 first-order + 3 Hessian (u <= v) + 3 distinct X^(u) dE/dbeta^(v)
    assert F.shape[1] == 8


def test_all_parameter_indexing():
    rep = strong_identifiability_test("constant", [1.0], order=1, d=2, index="all")
    assert rep.identifiable


def test_errors():
    with pytest.raises(UnsupportedOrderError):
        strong_identifiability_test("linear", order=3, d=2)
    with pytest.raises(ValueError):
        strong_identifiability_test("sigmoid", order=2, d=4, n_x=10)


def test_assumption4():
    b2 = MixingMeasure([0.0, 0.0], [[1.0, -1.0], [0.0, 0.0]], B2_BETA, B2_SIGMA2)
    assert check_assumption4(b2).passed
    dup = MixingMeasure([0.0, 0.0], [[1.0, 0.0], [0.0, 0.0]], [[1.0, 1.0, 1.0]] * 2, [1.0, 1.0])
    rep = check_assumption4(dup)
    assert not rep.passed and rep.violations[0][0] == "expert"
    assert check_assumption4(MixingMeasure([0.0], [[0.0]], [[0.0, 0.0]], [1.0])).passed
    parallel = MixingMeasure(np.zeros(3), [[0.0], [1.0], [2.0]], [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], np.ones(3))
    assert any(v[0] == "gating_difference" for v in check_assumption4(parallel).violations)


def test_translate_identity_and_normalize(rng):
    G = random_measure(rng, 3, 2)
    assert translate_gating(G, 0.0, [0.0, 0.0]).allclose(G)
    H = translate_gating(G, 0.9, [0.2, -0.4])
    assert loss_l1(normalize_gating(H), normalize_gating(G)).total < 1e-10

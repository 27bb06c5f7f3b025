import numpy as np
import pytest

from smoge.data import ConfigurationError, DgpSpec
from smoge.selection import (SelectionConfig, b2_learning_rate, b3_learning_rate, b4_learning_rate,
                             data_seed, default_fit_config, emit_table, fit_seed, paper_iterations,
                             run_figure1_sweep, run_selection)

QUICK = {"all": {"iterations": 150}}


def test_learning_rate_formulas():
    assert b4_learning_rate(500, 3, 2) == pytest.approx(0.1 + 0.0075 + 0.003)
    assert b4_learning_rate(500, 3, 1) == 0.06
    assert b2_learning_rate(10, 1) == pytest.approx(0.015)
    assert b2_learning_rate(100, 4) == pytest.approx(0.0036)
    rates = [b2_learning_rate(n, K) for n in (10, 25, 50, 100) for K in (1, 2, 3, 4)]
    assert min(rates) == pytest.approx(0.0036) and max(rates) == pytest.approx(0.015)
    assert b3_learning_rate(200, 2) == pytest.approx(2 * b3_learning_rate(100, 2))


def test_iteration_budgets():
    assert paper_iterations(DgpSpec.b4(5.0, 2, 2)) == 4000
    assert paper_iterations(DgpSpec.b4(5.0, 2, 1)) == 10_000
    assert paper_iterations(DgpSpec.b2()) == 50_000
    assert default_fit_config(DgpSpec.b4(5.0, 2, 2), 500, 2, "desk").iterations == 800
    assert default_fit_config(DgpSpec.b4(5.0, 2, 2), 500, 2, "paper").iterations == 4000


def test_seed_isolation():
    assert len({data_seed(0, r) for r in range(50)}) == 50
    assert len({fit_seed(0, r, K) for r in range(10) for K in range(1, 8)}) == 70
    assert data_seed(0, 1) == data_seed(0, 1)


def test_config_validation():
    spec = DgpSpec.b2()
    for bad in ((), (2, 1), (0, 1)):
        with pytest.raises(ConfigurationError):
            SelectionConfig(spec, 50, bad)
    with pytest.raises(ConfigurationError):
        SelectionConfig(spec, 50, (1, 2), replications=0)


def test_single_candidate_always_wins():
    res = run_selection(SelectionConfig(DgpSpec.b2(), 30, (3,), replications=3, fit_overrides=QUICK))
    assert res.proportion(3) == 1.0
    csv_text, table = emit_table([res])
    assert csv_text.splitlines() == ["d,k_star,n,K=3,best", "2,2,30,1.00,3"]
    assert "*1.00" in table


def test_reproducible_and_accounted():
    cfg = SelectionConfig(DgpSpec.b4(5.0, 2, 2), 60, (1, 2, 3), replications=4, fit_overrides=QUICK)
    a, b = run_selection(cfg), run_selection(cfg)
    assert np.array_equal(a.elbos, b.elbos) and a.winners == b.winners
    assert a.completed + len(a.failed) == 4
    assert a.win_proportions.sum() == pytest.approx(1.0)


def test_parallel_matches_serial():
    base = dict(dgp=DgpSpec.b2(), n=30, candidates=(1, 2), replications=3, fit_overrides=QUICK)
    a = run_selection(SelectionConfig(**base, jobs=1))
    b = run_selection(SelectionConfig(**base, jobs=2))
    assert np.array_equal(a.elbos, b.elbos)


def test_failed_replications_reported():
    cfg = SelectionConfig(DgpSpec.b2(), 30, (1, 2), replications=2,
                          fit_overrides={"all": {"iterations": 100, "learning_rate": 1e4}})
    with np.errstate(all="ignore"):
        res = run_selection(cfg)
    assert len(res.failed) + res.completed == 2
    assert res.failed
    assert all(res.winners[r] is None for r, _ in res.failed)


def test_ties_go_to_smaller_k(monkeypatch):
    import smoge.selection as sel

    def fake(cfg, rep):
        return rep, np.array([-1.0, -1.0]), np.zeros(2), None

    monkeypatch.setattr(sel, "_run_replication", fake)
    res = sel.run_selection(SelectionConfig(DgpSpec.b2(), 10, (1, 2), replications=2))
    assert res.winners == [1, 1]


def test_sweep_single_replication():
    out = run_figure1_sweep(DgpSpec.b2(), n_grid=(10, 25), candidates=(1, 2), replications=1,
                            fit_overrides=QUICK)
    assert list(out) == [10, 25]
    for res in out.values():
        assert set(res.win_proportions.tolist()) <= {0.0, 1.0}


def test_table_shapes():
    assert emit_table([])[0] == "d,k_star,n,best\n"
    results = []
    for d, k in ((2, 1), (2, 2), (4, 3)):
        cfg = SelectionConfig(DgpSpec.b4(5.0, d, k), 20, tuple(range(1, 8)), replications=1,
                              fit_overrides={"all": {"iterations": 20}})
        results.append(run_selection(cfg))
    lines = emit_table(results)[0].splitlines()
    assert len(lines) == 4
    assert lines[0].split(",")[3:10] == [f"K={k}" for k in range(1, 8)]


@pytest.mark.slow
def test_b2_small_n_favours_fewer_experts():
    res = run_figure1_sweep(DgpSpec.b2(), n_grid=(10,), replications=10)[10]
    assert res.proportion(1) > 0

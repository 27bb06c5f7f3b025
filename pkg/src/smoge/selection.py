"""ELBO-based selection of the number of experts.

For every replication a dataset is simulated, each candidate K is fitted by
BBVI and the candidate with the highest final ELBO wins (ties go to the
smaller K). Seeds for data and fits are derived from the master seed, the
replication index and K, so results do not depend on execution order.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .data import ConfigurationError, DgpSpec, sample_dgp
from .vi import FitAborted, FitConfig, PriorConfig, fit

SCALES = ("desk", "paper")

B2_N_GRID = (10, 25, 50, 100)
B3_N_GRID = (100, 500, 1000, 2000)


def derive_seed(*keys: int) -> int:
    """Deterministic 63-bit seed from a tuple of non-negative integers."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def data_seed(master: int, rep: int) -> int:
    return derive_seed(master, 0, rep)


def fit_seed(master: int, rep: int, K: int) -> int:
    return derive_seed(master, 1, rep, K)


def b2_learning_rate(n: int, K: int) -> float:
    """Step size for the two-expert sweep: 0.015 at (n=10, K=1) down to 0.0036 at (n=100, K=4).

    Geometric in the combined rank of n on the default grid and K.
    """
    ranks = {10: 0, 25: 1, 50: 2, 100: 3}
    r_n = ranks.get(n, 3 if n > 100 else 0)
    t = (r_n + min(max(K, 1), 4) - 1) / 6.0
    return float(0.015 * (0.0036 / 0.015) ** t)


def b3_learning_rate(n: int, K: int, base: float = 0.01) -> float:
    """Linear in n with ``base`` at n = 100."""
    return float(base * n / 100.0)


def b4_learning_rate(n: int, K: int, k_star: int) -> float:
    if k_star == 1:
        return 0.06
    return float(0.1 + 0.000015 * n + 0.001 * K)


def paper_iterations(spec: DgpSpec) -> int:
    if spec.kind == "b2":
        return 50_000
    if spec.kind == "b3":
        return 10_000
    if spec.kind == "b4":
        return 10_000 if spec.k_star == 1 else 4_000
    return 4_000


def default_fit_config(spec: DgpSpec, n: int, K: int, scale: str = "desk") -> FitConfig:
    """Iterations and step size for one candidate; desk scale divides iterations by 5."""
    if scale not in SCALES:
        raise ConfigurationError(f"scale must be one of {SCALES}")
    iters = paper_iterations(spec)
    if scale == "desk":
        iters //= 5
    if spec.kind == "b2":
        lr = b2_learning_rate(n, K)
    elif spec.kind == "b3":
        lr = b3_learning_rate(n, K)
    elif spec.kind == "b4":
        lr = b4_learning_rate(n, K, spec.k_star)
    else:
        lr = 0.05
    return FitConfig(iterations=iters, learning_rate=lr)


@dataclass
class SelectionConfig:
    dgp: DgpSpec
    n: int
    candidates: tuple[int, ...]
    replications: int = 20
    master_seed: int = 0
    scale: str = "desk"
    fit_overrides: dict = field(default_factory=dict)
    prior: PriorConfig = field(default_factory=PriorConfig)
    jobs: int = 1

    def __post_init__(self):
        self.candidates = tuple(int(k) for k in self.candidates)
        if not self.candidates:
            raise ConfigurationError("candidates must be non-empty")
        if any(k < 1 for k in self.candidates) or any(
                b <= a for a, b in zip(self.candidates, self.candidates[1:])):
            raise ConfigurationError("candidates must be strictly increasing positive integers")
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        if self.n < 0:
            raise ConfigurationError("n must be non-negative")
        if self.scale not in SCALES:
            raise ConfigurationError(f"scale must be one of {SCALES}")
        self.dgp.validate()

    def fit_config(self, K: int, rep: int) -> FitConfig:
        base = default_fit_config(self.dgp, self.n, K, self.scale)
        over = self.fit_overrides.get(K, self.fit_overrides.get("all", {}))
        if isinstance(over, FitConfig):
            base = over
        elif over:
            base = replace(base, **over)
        return replace(base, seed=fit_seed(self.master_seed, rep, K))

    def describe(self) -> dict:
        return {
            **self.dgp.describe(), "n": self.n, "candidates": list(self.candidates),
            "replications": self.replications, "master_seed": self.master_seed, "scale": self.scale,
        }


@dataclass
class SelectionResult:
    config: dict
    candidates: tuple[int, ...]
    win_counts: np.ndarray
    winners: list
    elbos: np.ndarray
    elbo_std_errors: np.ndarray
    failed: list
    runtime_seconds: float

    @property
    def completed(self) -> int:
        return int(self.win_counts.sum())

    @property
    def win_proportions(self) -> np.ndarray:
        total = self.win_counts.sum()
        if total == 0:
            return np.zeros(len(self.candidates))
        return self.win_counts / total

    def proportion(self, K: int) -> float:
        return float(self.win_proportions[self.candidates.index(K)])

    @property
    def modal_winner(self) -> int:
        return self.candidates[int(np.argmax(self.win_counts))]

    def replication_rows(self) -> list[dict]:
        rows = []
        for r, w in enumerate(self.winners):
            row = {"replication": r, "winner": -1 if w is None else w}
            for j, K in enumerate(self.candidates):
                row[f"elbo_K{K}"] = self.elbos[r, j]
            rows.append(row)
        return rows


def _run_replication(cfg: SelectionConfig, rep: int):
    data = sample_dgp(cfg.dgp, cfg.n, data_seed(cfg.master_seed, rep))
    elbos, ses = [], []
    for K in cfg.candidates:
        try:
            res = fit(data, K, cfg.prior, cfg.fit_config(K, rep))
        except FitAborted as exc:
            return rep, None, None, f"K={K}: {exc}"
        elbos.append(res.final_elbo)
        ses.append(res.final_elbo_std_error)
    return rep, np.array(elbos), np.array(ses), None


def run_selection(cfg: SelectionConfig) -> SelectionResult:
    start = time.perf_counter()
    reps = range(cfg.replications)
    if cfg.jobs == 1:
        out = [_run_replication(cfg, r) for r in reps]
    else:
        out = Parallel(n_jobs=cfg.jobs)(delayed(_run_replication)(cfg, r) for r in reps)
    out.sort(key=lambda item: item[0])
    C = len(cfg.candidates)
    elbos = np.full((cfg.replications, C), np.nan)
    ses = np.full((cfg.replications, C), np.nan)
    counts = np.zeros(C, dtype=int)
    winners, failed = [], []
    for rep, e, s, err in out:
        if err is not None:
            winners.append(None)
            failed.append((rep, err))
            continue
        elbos[rep], ses[rep] = e, s
        # np.argmax returns the first maximum, i.e. the smaller K on ties
        j = int(np.argmax(e))
        counts[j] += 1
        winners.append(cfg.candidates[j])
    return SelectionResult(cfg.describe(), cfg.candidates, counts, winners, elbos, ses, failed,
                           time.perf_counter() - start)


def run_figure1_sweep(dgp: DgpSpec, n_grid=None, candidates=None, replications: int = 20,
                      master_seed: int = 0, scale: str = "desk", jobs: int = 1,
                      fit_overrides: dict | None = None) -> dict[int, SelectionResult]:
    if dgp.kind not in ("b2", "b3"):
        raise ConfigurationError("the sweep is defined for the b2 and b3 processes")
    if n_grid is None:
        n_grid = B2_N_GRID if dgp.kind == "b2" else B3_N_GRID
    if candidates is None:
        candidates = (1, 2, 3, 4) if dgp.kind == "b2" else tuple(range(1, 7))
    results = {}
    for n in n_grid:
        cfg = SelectionConfig(dgp, n, tuple(candidates), replications, master_seed, scale,
                              dict(fit_overrides or {}), jobs=jobs)
        results[n] = run_selection(cfg)
    return results


def emit_table(results) -> tuple[str, str]:
    """Win-proportion table as (csv_text, aligned_text).

    One row per configuration, one column per candidate K with proportions
    to two decimals, and a ``best`` column holding the modal K.
    """
    results = list(results.values()) if isinstance(results, dict) else list(results)
    cands = results[0].candidates if results else ()
    header = ["d", "k_star", "n"] + [f"K={k}" for k in cands] + ["best"]
    rows = []
    for res in results:
        if res.candidates != cands:
            raise ValueError("all results in one table must share the candidate set")
        props = res.win_proportions
        rows.append([str(res.config.get("d")), str(res.config.get("k_star")), str(res.config.get("n"))]
                    + [f"{p:.2f}" for p in props] + [str(res.modal_winner)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = []
    for r in [header] + rows:
        cells = []
        for i, c in enumerate(r):
            text = c
            if r is not header and 3 <= i < 3 + len(cands) and cands[i - 3] == int(r[-1]):
                text = f"*{c}"
            cells.append(text.rjust(widths[i] + 1))
        lines.append(" ".join(cells))
    return buf.getvalue(), "\n".join(lines) + "\n"

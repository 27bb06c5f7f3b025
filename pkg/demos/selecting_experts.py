"""Choosing the number of experts by the final ELBO.

Uses the two-expert process (experts switch where x1 > x2) at a few small
sample sizes. Budgets are cut well below the defaults so this finishes in
a few seconds; the selection harness and CLI run the full sweep.
"""

import numpy as np

from smoge import DgpSpec, FitConfig, SelectionConfig, emit_table, fit, run_selection, sample_dgp

spec = DgpSpec.b2()
data = sample_dgp(spec, 100, seed=0)
print("true experts used:", np.bincount(data.z)[1:])

# one fit per candidate K; the largest final ELBO wins
for K in (1, 2, 3):
    res = fit(data, K, cfg=FitConfig(iterations=3000, learning_rate=0.01, seed=K))
    print(f"K={K}: final ELBO {res.final_elbo:9.2f} +- {res.final_elbo_std_error:.2f}")

# the harness repeats this over replications with derived seeds
results = []
for n in (10, 50, 100):
    cfg = SelectionConfig(spec, n, (1, 2, 3), replications=5, fit_overrides={"all": {"iterations": 2000}})
    results.append(run_selection(cfg))
_, table = emit_table(results)
print(table)
print("(* marks the most frequent winner)")

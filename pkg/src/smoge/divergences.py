"""Monte-Carlo divergences between two SMoGE joint densities.

Covariates are drawn uniformly on the cube. For the Hellinger and L1
estimators the response is drawn from the balanced mixture
(f1 + f2) / 2, so the importance weights are bounded by 2 and the
estimators stay well behaved when the two densities are far apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import MixingMeasure, log_conditional_density, log_gate_weights


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    std_error: float
    n_samples: int
    seed: int
    infinite: bool = False


def _check(G1: MixingMeasure, G2: MixingMeasure, n_mc: int, shards: int):
    if G1.d != G2.d:
        raise ValueError(f"dimension mismatch: {G1.d} vs {G2.d}")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    if shards < 1:
        raise ValueError("shards must be >= 1")


def _sample_y(G: MixingMeasure, x: np.ndarray, rng) -> np.ndarray:
    w = np.exp(log_gate_weights(G, x))
    u = rng.uniform(size=(x.shape[0], 1))
    z = np.minimum((np.cumsum(w, axis=1) < u).sum(axis=1), G.K - 1)
    mu = G.family.mean(x, G.beta)[np.arange(x.shape[0]), z]
    return mu + np.sqrt(G.sigma2[z]) * rng.standard_normal(x.shape[0])


def _balanced_draws(G1, G2, n, rng):
    x = rng.uniform(-1.0, 1.0, size=(n, G1.d))
    pick = rng.uniform(size=n) < 0.5
    y = np.where(pick, _sample_y(G1, x, rng), _sample_y(G2, x, rng))
    l1 = log_conditional_density(G1, y, x)
    l2 = log_conditional_density(G2, y, x)
    return l1, l2


def _shard_sizes(n_mc, shards):
    base, extra = divmod(n_mc, shards)
    return [base + (1 if i < extra else 0) for i in range(shards)]


def _run(G1, G2, n_mc, seed, shards, per_shard):
    parts = []
    for size, ss in zip(_shard_sizes(n_mc, shards), np.random.SeedSequence(seed).spawn(shards)):
        if size:
            parts.append(per_shard(G1, G2, size, np.random.default_rng(ss)))
    return np.concatenate(parts)


def _estimate(samples, scale, offset=0.0):
    n = samples.shape[0]
    se = scale * float(np.std(samples, ddof=1)) / np.sqrt(n) if n > 1 else float("nan")
    return offset + scale * float(np.mean(samples)), se


def hellinger_sq_mc(G1: MixingMeasure, G2: MixingMeasure, n_mc: int = 200_000, seed: int = 0,
                    shards: int = 1) -> DivergenceEstimate:
    """Squared Hellinger distance ∫(√g1 − √g2)², which lies in [0, 2]."""
    _check(G1, G2, n_mc, shards)

    def shard(G1, G2, n, rng):
        l1, l2 = _balanced_draws(G1, G2, n, rng)
        hi = np.maximum(l1, l2)
        # sqrt(f1 f2) / ((f1 + f2)/2), evaluated in log space
        return np.exp(0.5 * (l1 + l2) - hi - np.log(0.5 * (np.exp(l1 - hi) + np.exp(l2 - hi))))

    w = _run(G1, G2, n_mc, seed, shards, shard)
    value, se = _estimate(w, -2.0, offset=2.0)
    return DivergenceEstimate(max(value, 0.0), abs(se), n_mc, seed)


def l1_norm_mc(G1: MixingMeasure, G2: MixingMeasure, n_mc: int = 200_000, seed: int = 0,
               shards: int = 1) -> DivergenceEstimate:
    """∫|g1 − g2|, which lies in [0, 2]."""
    _check(G1, G2, n_mc, shards)

    def shard(G1, G2, n, rng):
        l1, l2 = _balanced_draws(G1, G2, n, rng)
        hi = np.maximum(l1, l2)
        a, b = np.exp(l1 - hi), np.exp(l2 - hi)
        return np.abs(a - b) / (0.5 * (a + b))

    w = _run(G1, G2, n_mc, seed, shards, shard)
    value, se = _estimate(w, 1.0)
    return DivergenceEstimate(value, se, n_mc, seed)


def kl_mc(G1: MixingMeasure, G2: MixingMeasure, n_mc: int = 200_000, seed: int = 0,
          shards: int = 1) -> DivergenceEstimate:
    """KL(g1 ‖ g2) with samples from g1.

    If g2 underflows at a sample the estimate is +inf and ``infinite`` is set.
    """
    _check(G1, G2, n_mc, shards)

    def shard(G1, G2, n, rng):
        x = rng.uniform(-1.0, 1.0, size=(n, G1.d))
        y = _sample_y(G1, x, rng)
        return log_conditional_density(G1, y, x) - log_conditional_density(G2, y, x)

    r = _run(G1, G2, n_mc, seed, shards, shard)
    if not np.all(np.isfinite(r)):
        return DivergenceEstimate(float("inf"), float("inf"), n_mc, seed, infinite=True)
    value, se = _estimate(r, 1.0)
    return DivergenceEstimate(value, se, n_mc, seed)

"""Empirical checks of the posterior contraction claims.

Contains a random-walk Metropolis sampler on the SMoGE posterior, point
estimates (VI mean or MH posterior mean), rate-versus-n slope experiments
for the Hellinger distance and the Voronoi losses, and a scan of the ratio
d_H / Voronoi loss near the truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import brentq

from . import _kernels
from .data import ConfigurationError, DgpSpec, sample_dgp
from .divergences import hellinger_sq_mc
from .experts import get_family
from .model import (DEFAULT_BOUNDS, MixingMeasure, ParamBounds, normalize_gating, pack,
                    theta_size, translate_gating, unpack)
from .vi import FitConfig, PriorConfig, _kernel_constants, fit, init_state
from .voronoi import loss_l1, loss_l2, voronoi_cells

# ---------------------------------------------------------------- sampler

ACCEPT_BAND = (0.1, 0.6)


def default_proposal_scale(n: int) -> float:
    """Step size shrinking like the posterior spread, 1.5 / sqrt(n + 10)."""
    return 1.5 / math.sqrt(n + 10)


@dataclass
class MHResult:
    chain: np.ndarray
    log_post: np.ndarray
    acceptance_rate: float
    flagged: bool
    K: int
    d: int
    family: object
    proposal_scale: float = float("nan")

    @property
    def calibrated(self) -> bool:
        """Acceptance rate inside the usual random-walk band [0.1, 0.6]."""
        return ACCEPT_BAND[0] <= self.acceptance_rate <= ACCEPT_BAND[1]

    def posterior_mean(self) -> np.ndarray:
        """Mean of the last ceil(steps / 2) states."""
        keep = math.ceil(self.chain.shape[0] / 2)
        return self.chain[-keep:].mean(axis=0)


def metropolis_ratio(log_current: float, log_proposal: float) -> float:
    """exp(log_proposal - log_current); acceptance probability is min(1, ratio)."""
    return float(np.exp(log_proposal - log_current))


def reflect(theta: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Fold coordinates back into [lo, hi] by mirror reflection at the walls."""
    width = hi - lo
    z = np.mod(theta - lo, 2.0 * width)
    return lo + np.where(z > width, 2.0 * width - z, z)


class _LogPosterior:
    def __init__(self, data, K, family, prior):
        self.fam = get_family(family)
        self.K, self.d = K, data.d
        self.p = self.fam.n_params(self.d)
        self.x = np.ascontiguousarray(data.x)
        self.y = np.ascontiguousarray(data.y)
        self.pv, self.lp_const = _kernel_constants(K, self.d, self.fam, prior)
        self.prior = prior
        self.code = _kernels.FAMILY_CODES[self.fam.name]
        self.grad = np.empty(theta_size(K, self.d, self.p))
        self.buf = np.empty((4, K))

    def __call__(self, theta):
        return _kernels.log_joint_grad(theta, self.x, self.y, self.K, self.d, self.p, self.code, self.pv,
                                       self.lp_const, self.prior.ig_shape, self.prior.ig_rate,
                                       self.grad, self.buf)


def mh_sample(data, K: int, prior: PriorConfig = PriorConfig(), bounds: ParamBounds = DEFAULT_BOUNDS,
              steps: int = 10_000, proposal_scale: float | None = None, seed: int = 0, family="linear",
              init=None) -> MHResult:
    """Random-walk Metropolis on the log posterior in the flat parameterisation.

    Proposals add independent N(0, proposal_scale^2) noise to every
    coordinate and are reflected into the parameter box, which keeps the
    proposal symmetric. The default scale is ``default_proposal_scale(n)``. ``init`` may be a MixingMeasure (e.g. a VI point
    estimate) or a flat vector; by default the VI initialisation is used.
    Chains accepting fewer than 1% of proposals are flagged.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if proposal_scale is None:
        proposal_scale = default_proposal_scale(data.n)
    if not proposal_scale > 0:
        raise ValueError("proposal_scale must be positive")
    fam = get_family(family)
    d = data.d
    lo, hi = bounds.theta_box(K, d, fam.n_params(d))
    init_ss, walk_ss = np.random.SeedSequence(seed).spawn(2)
    if init is None:
        theta = init_state(K, d, fam, init_ss).mean.copy()
    elif isinstance(init, MixingMeasure):
        theta = pack(init)
    else:
        theta = np.array(init, dtype=float)
    theta = np.clip(theta, lo, hi)
    log_post = _LogPosterior(data, K, fam, prior)
    rng = np.random.default_rng(walk_ss)
    current = log_post(theta)
    chain = np.empty((steps, theta.shape[0]))
    trace = np.empty(steps)
    accepted = 0
    for t in range(steps):
        prop = reflect(theta + proposal_scale * rng.standard_normal(theta.shape[0]), lo, hi)
        lp = log_post(prop)
        if np.log(rng.uniform()) < lp - current:
            theta, current = prop, lp
            accepted += 1
        chain[t] = theta
        trace[t] = current
    rate = accepted / steps
    return MHResult(chain, trace, rate, rate < 0.01, K, d, fam, float(proposal_scale))


def effective_sample_size(samples: np.ndarray) -> float:
    """ESS of a 1-d chain from the initial positive sequence of autocorrelations."""
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var == 0:
        return float(n)
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = 1.0
    for k in range(1, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
    return float(n / tau)


# ---------------------------------------------------------------- estimates


@dataclass(frozen=True)
class EstimatorConfig:
    fit: FitConfig = field(default_factory=lambda: FitConfig(iterations=4000, learning_rate=0.05, lr_final=0.002))
    mh_steps: int = 20_000
    proposal_scale: float | None = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    bounds: ParamBounds = DEFAULT_BOUNDS


def point_estimate(data, K: int, method: str = "vi_mean", cfg: EstimatorConfig = EstimatorConfig(),
                   family="linear") -> MixingMeasure:
    """Gating-normalised point estimate from a VI fit or an MH chain.

    ``mh_posterior_mean`` starts the chain at the VI mean and averages the
    last ceil(steps / 2) states coordinate-wise (variances via the mean of
    their logs).
    """
    fam = get_family(family)
    if method not in ("vi_mean", "mh_posterior_mean"):
        raise ValueError(f"unknown estimator {method!r}")
    res = fit(data, K, cfg.prior, cfg.fit, family=fam, bounds=cfg.bounds)
    if method == "vi_mean":
        return normalize_gating(res.point_estimate)
    mh = mh_sample(data, K, cfg.prior, cfg.bounds, cfg.mh_steps, cfg.proposal_scale,
                   seed=cfg.fit.seed, family=fam, init=res.final_state.mean)
    return normalize_gating(unpack(mh.posterior_mean(), K, data.d, fam, bounds=cfg.bounds))


def align_gating(G: MixingMeasure, G_star: MixingMeasure, loss=loss_l1) -> MixingMeasure:
    """Gating translation of G that best matches G_star under ``loss``.

    Softmax gating is invariant to a common shift, and the fitted component
    playing the role of G_star's last (reference) atom is not known in
    advance. Each component of G is tried as the anchor whose gating is set
    equal to G_star's last atom; the translation with the smallest loss wins.
    """
    best, best_val = None, np.inf
    for i in range(G.K):
        t0 = G_star.alpha0[-1] - G.alpha0[i]
        t1 = G_star.alpha1[-1] - G.alpha1[i]
        cand = G.replace(alpha0=G.alpha0 + t0, alpha1=G.alpha1 + t1)
        val = loss(cand, G_star).total
        if val < best_val:
            best, best_val = cand, val
    return best


# ---------------------------------------------------------------- rates


@dataclass(frozen=True)
class RateSchedule:
    n_grid: tuple[int, ...]
    replications_per_n: int = 10
    target: str = "exact_specified"
    estimator: str = "vi_mean"

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        object.__setattr__(self, "n_grid", grid)
        if len(grid) < 3:
            raise ConfigurationError("slope fitting needs at least three sample sizes")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigurationError("n_grid must be increasing")
        if self.replications_per_n < 1:
            raise ConfigurationError("replications_per_n must be >= 1")
        if self.target not in ("exact_specified", "over_specified"):
            raise ConfigurationError(f"unknown target {self.target!r}")
        if self.estimator not in ("vi_mean", "mh_posterior_mean"):
            raise ConfigurationError(f"unknown estimator {self.estimator!r}")


@dataclass
class RateResult:
    rows: list[dict]
    slopes: dict[str, tuple[float, float]]
    medians: dict[str, list[float]]
    n_grid: tuple[int, ...]


def fit_loglog_slope(n_grid, values) -> tuple[float, float]:
    """Least-squares slope of log(values) on log(n) and its standard error."""
    lx = np.log(np.asarray(n_grid, dtype=float))
    ly = np.log(np.asarray(values, dtype=float))
    A = np.column_stack([np.ones_like(lx), lx])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    dof = len(lx) - 2
    if dof > 0:
        s2 = float(resid @ resid) / dof
        se = math.sqrt(s2 * np.linalg.inv(A.T @ A)[1, 1])
    else:
        se = float("nan")
    return float(coef[1]), se


def _cell_contributions(G, G_star):
    """Loss-L2 per-cell terms split by cell size (singleton vs multi-member)."""
    rep = loss_l2(G, G_star)
    sizes = [len(c) for c in rep.cells]
    single = sum(t for t, s in zip(rep.per_cell_terms, sizes) if s == 1)
    multi = sum(t for t, s in zip(rep.per_cell_terms, sizes) if s > 1)
    return float(single), float(multi)


def _rate_point(spec, G_star, n, rep, seed, K, estimator, cfg, loss_fn, loss_name, exact, n_mc):
    dseed, fseed, hseed = (int(s) for s in np.random.SeedSequence([seed, n, rep]).generate_state(3))
    data = sample_dgp(spec, n, dseed)
    est_cfg = replace(cfg, fit=replace(cfg.fit, seed=fseed))
    G_hat = point_estimate(data, K, estimator, est_cfg, G_star.family)
    G_hat = align_gating(G_hat, G_star, loss_fn)
    h = hellinger_sq_mc(G_hat, G_star, n_mc=n_mc, seed=hseed)
    row = {"n": n, "rep": rep, "hellinger": math.sqrt(h.value), "hellinger_sq_se": h.std_error,
           loss_name: loss_fn(G_hat, G_star).total}
    if not exact:
        row["singleton_term"], row["multi_term"] = _cell_contributions(G_hat, G_star)
    return row


def rate_experiment(schedule: RateSchedule, G_star: MixingMeasure, seed: int = 0, fit_k: int | None = None,
                    cfg: EstimatorConfig = EstimatorConfig(), n_mc: int = 100_000, jobs: int = 1) -> RateResult:
    """Loss-versus-n experiment for a SMoGE truth.

    Exact targets fit K = K* and use the first-power loss; over-specified
    targets fit K = K* + 1 (or ``fit_k``) and use the squared-cell loss.
    Every estimate is gating-aligned to G_star before losses are computed.
    Seeds depend only on (seed, n, rep), so ``jobs`` does not change results.
    """
    if not G_star.is_normalized():
        raise ConfigurationError("G_star must have zero gating on its last component")
    exact = schedule.target == "exact_specified"
    K = fit_k if fit_k is not None else (G_star.K if exact else G_star.K + 1)
    if K < 1:
        raise ConfigurationError("fit_k must be positive")
    loss_fn = loss_l1 if exact else loss_l2
    loss_name = "l1" if exact else "l2"
    spec = DgpSpec.smoge(G_star)
    tasks = [(n, rep) for n in schedule.n_grid for rep in range(schedule.replications_per_n)]
    args = (seed, K, schedule.estimator, cfg, loss_fn, loss_name, exact, n_mc)
    if jobs == 1:
        rows = [_rate_point(spec, G_star, n, rep, *args) for n, rep in tasks]
    else:
        rows = Parallel(n_jobs=jobs)(delayed(_rate_point)(spec, G_star, n, rep, *args) for n, rep in tasks)
    keys = ["hellinger", loss_name] + ([] if exact else ["singleton_term", "multi_term"])
    medians, slopes = {}, {}
    for key in keys:
        med = [float(np.median([r[key] for r in rows if r["n"] == n])) for n in schedule.n_grid]
        medians[key] = med
        if all(m > 0 for m in med):
            slopes[key] = fit_loglog_slope(schedule.n_grid, med)
        else:
            slopes[key] = (float("nan"), float("nan"))
    return RateResult(rows, slopes, medians, schedule.n_grid)


def posterior_tail_fraction(mh: MHResult, G_star: MixingMeasure, n: int, M: float = 10.0,
                            loss=loss_l1, thin: int = 10) -> float:
    """Share of post-burn-in states whose aligned loss exceeds M sqrt(log n / n)."""
    keep = mh.chain[-math.ceil(mh.chain.shape[0] / 2):][::thin]
    radius = M * math.sqrt(math.log(n) / n)
    outside = 0
    for theta in keep:
        G = align_gating(unpack(theta, mh.K, mh.d, mh.family), G_star, loss)
        outside += loss(G, G_star).total >= radius
    return outside / keep.shape[0]


# ---------------------------------------------------------------- ratio scan


@dataclass
class RatioScanRow:
    eps: float
    min_ratio: float
    median_ratio: float
    ratios: np.ndarray
    losses: np.ndarray
    hellinger: np.ndarray
    flagged: int


def split_atom(G: MixingMeasure, j: int = 0) -> MixingMeasure:
    """Replace atom j by two copies carrying half its weight each."""
    order = list(range(G.K))
    order.insert(j + 1, j)
    a0 = G.alpha0[order].copy()
    a0[j] -= math.log(2.0)
    a0[j + 1] -= math.log(2.0)
    return G.replace(alpha0=a0, alpha1=G.alpha1[order], beta=G.beta[order], sigma2=G.sigma2[order])


def _perturb(G: MixingMeasure, direction: np.ndarray, t: float) -> MixingMeasure:
    K, d, p = G.K, G.d, G.p
    w = direction
    a1 = G.alpha1 + t * w[: K * d].reshape(K, d)
    off = K * d
    b = G.beta + t * w[off: off + K * p].reshape(K, p)
    off += K * p
    s2 = G.sigma2 + t * w[off: off + K]
    off += K
    a0 = G.alpha0 + t * w[off: off + K]
    return G.replace(alpha0=a0, alpha1=a1, beta=b, sigma2=s2)


def random_direction(G: MixingMeasure, rng) -> np.ndarray:
    """Unit direction over (alpha1, beta, sigma2) of every atom plus log-weights.

    Coordinates of the last atom's gating are zeroed so perturbed measures
    stay gating-normalised.
    """
    K, d, p = G.K, G.d, G.p
    n_omega = K * (d + 1 + p)
    omega_dir = rng.standard_normal(n_omega)
    omega_dir[(K - 1) * d: K * d] = 0.0
    omega_dir /= np.linalg.norm(omega_dir)
    weight_dir = rng.standard_normal(K)
    weight_dir[-1] = 0.0
    weight_dir /= max(np.linalg.norm(weight_dir), 1e-300)
    return np.concatenate([omega_dir, weight_dir])


def perturb_to_loss(G_base: MixingMeasure, G_star: MixingMeasure, direction: np.ndarray, eps: float,
                    loss=loss_l1) -> MixingMeasure:
    """Move G_base along ``direction`` until loss(G, G_star) equals eps."""
    def f(t):
        return loss(_perturb(G_base, direction, t), G_star).total - eps

    K, d, p = G_base.K, G_base.d, G_base.p
    s2_dir = direction[K * (d + p): K * (d + p + 1)]
    shrink = s2_dir < 0
    # keep every variance above half its starting value
    s2_cap = float(np.min(0.5 * G_base.sigma2[shrink] / -s2_dir[shrink])) if shrink.any() else 1e6
    t_hi = 1e-6
    while f(t_hi) < 0:
        t_hi *= 2.0
        if t_hi > s2_cap:
            raise ValueError("cannot reach the requested loss while keeping variances positive")
    t = brentq(f, 0.0, t_hi, xtol=1e-14, rtol=1e-12) if f(0.0) < 0 else 0.0
    return _perturb(G_base, direction, t)


def hellinger_voronoi_ratio_scan(G_star: MixingMeasure, eps_list=(1e-1, 1e-2), trials_per_eps: int = 50,
                                 seed: int = 0, loss: str | None = None, over_specified: bool | None = None,
                                 n_mc: int = 200_000) -> list[RatioScanRow]:
    """Ratio d_H(g_G, g_G*) / loss(G, G*) for random G near G*.

    Linear experts default to the first-power loss at K = K*; sigmoid experts
    default to the squared-cell loss with one atom of G* split in two before
    perturbing. A trial whose Hellinger standard error exceeds 10% of the
    estimate is rerun with 4x samples and counted in ``flagged`` if still noisy.
    """
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be positive and strictly decreasing")
    if loss is None:
        loss = "l2" if G_star.family.name == "sigmoid" else "l1"
    loss_fn = {"l1": loss_l1, "l2": loss_l2}[loss]
    if over_specified is None:
        over_specified = loss == "l2"
    base = split_atom(G_star, 0) if over_specified else G_star
    rng = np.random.default_rng(seed)
    out = []
    for eps in eps_list:
        ratios, losses, hell = [], [], []
        flagged = 0
        for _ in range(trials_per_eps):
            for _attempt in range(100):
                direction = random_direction(base, rng)
                try:
                    G = perturb_to_loss(base, G_star, direction, eps, loss_fn)
                    break
                except ValueError:
                    continue
            else:
                raise RuntimeError(f"no admissible perturbation found at eps={eps}")
            hseed = int(rng.integers(2**62))
            h = hellinger_sq_mc(G, G_star, n_mc=n_mc, seed=hseed)
            dh = math.sqrt(h.value)
            if dh == 0 or h.std_error / (2.0 * dh) > 0.1 * dh:
                h = hellinger_sq_mc(G, G_star, n_mc=4 * n_mc, seed=hseed)
                dh = math.sqrt(h.value)
                if dh == 0 or h.std_error / (2.0 * dh) > 0.1 * dh:
                    flagged += 1
            L = loss_fn(G, G_star).total
            ratios.append(dh / L)
            losses.append(L)
            hell.append(dh)
        ratios = np.array(ratios)
        out.append(RatioScanRow(eps, float(ratios.min()), float(np.median(ratios)), ratios,
                                np.array(losses), np.array(hell), flagged))
    return out


__all__ = [
    "MHResult", "ACCEPT_BAND", "default_proposal_scale", "mh_sample", "metropolis_ratio", "reflect", "effective_sample_size",
    "EstimatorConfig", "point_estimate", "align_gating", "RateSchedule", "RateResult",
    "fit_loglog_slope", "rate_experiment", "posterior_tail_fraction", "RatioScanRow",
    "split_atom", "random_direction", "perturb_to_loss", "hellinger_voronoi_ratio_scan",
    "voronoi_cells", "translate_gating",
]

"""Black-box variational inference for a fixed number of experts.

The variational family is a fully factorised Gaussian over the flat vector
``theta = [alpha0, alpha1, beta, log sigma2]``. Samples are drawn by the
location-scale map ``theta = mean + eps * exp(log_std)`` so the ELBO value
and its pathwise gradient share the same ``eps``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .data import Dataset
from .experts import ExpertFamily, get_family
from .model import (DEFAULT_BOUNDS, LOG_2PI, MixingMeasure, ParamBounds, theta_size,
                    theta_slices, unpack)


class FitAborted(RuntimeError):
    """Raised when the ELBO or its gradient turns non-finite during a fit."""

    def __init__(self, iteration: int, block: str, message: str = ""):
        self.iteration = iteration
        self.block = block
        super().__init__(message or f"non-finite ELBO at iteration {iteration} (block {block})")


@dataclass(frozen=True)
class PriorConfig:
    gating_var: float = 10.0
    slope_var: float = 10.0
    intercept_var: float = 10.0
    ig_shape: float = 2.0
    ig_rate: float = 2.0

    def __post_init__(self):
        if min(self.gating_var, self.slope_var, self.intercept_var, self.ig_shape, self.ig_rate) <= 0:
            raise ValueError("prior variances and Inverse-Gamma hyperparameters must be positive")

    def prior_vars(self, K: int, d: int, family) -> np.ndarray:
        """Gaussian prior variance for every coefficient of theta (log-variances excluded)."""
        fam = get_family(family)
        if fam.name == "linear":
            beta_var = [self.intercept_var] + [self.slope_var] * d
        elif fam.name == "sigmoid":
            beta_var = [self.slope_var] * d
        else:
            beta_var = [self.intercept_var]
        return np.concatenate([
            np.full(K * (1 + d), self.gating_var),
            np.tile(beta_var, K),
        ])


@dataclass(frozen=True, eq=False)
class VariationalState:
    mean: np.ndarray
    log_std: np.ndarray
    K: int
    d: int
    family: ExpertFamily = field(default=None)

    def __post_init__(self):
        fam = get_family(self.family if self.family is not None else "linear")
        object.__setattr__(self, "family", fam)
        P = theta_size(self.K, self.d, fam.n_params(self.d))
        m = np.array(self.mean, dtype=float).reshape(-1)
        s = np.array(self.log_std, dtype=float).reshape(-1)
        if m.shape != (P,) or s.shape != (P,):
            raise ValueError(f"variational parameters must have length {P}")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
            raise ValueError("variational parameters must be finite")
        m.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "log_std", s)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @property
    def size(self) -> int:
        return self.mean.shape[0]

    def block(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        sl = theta_slices(self.K, self.d, self.family.n_params(self.d))[name]
        return self.mean[sl], self.log_std[sl]

    def to_dict(self) -> dict:
        sl = theta_slices(self.K, self.d, self.family.n_params(self.d))
        return {
            "K": self.K, "d": self.d, "family": self.family.name,
            "blocks": {name: {"mean": self.mean[s].tolist(), "log_std": self.log_std[s].tolist()}
                       for name, s in sl.items()},
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "VariationalState":
        names = ("alpha0", "alpha1", "beta", "log_sigma2")
        mean = np.concatenate([rec["blocks"][k]["mean"] for k in names])
        log_std = np.concatenate([rec["blocks"][k]["log_std"] for k in names])
        return cls(mean, log_std, int(rec["K"]), int(rec["d"]), rec["family"])


@dataclass(frozen=True)
class FitConfig:
    iterations: int = 4000
    learning_rate: float = 0.01
    mc_samples_per_step: int = 1
    final_elbo_samples: int = 200
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float = 0.1
    lr_final: float | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.final_elbo_samples < 1 or self.mc_samples_per_step < 1:
            raise ValueError("sample counts must be >= 1")
        if self.lr_final is not None and not self.lr_final > 0:
            raise ValueError("lr_final must be positive")

    def learning_rates(self) -> np.ndarray:
        """Per-iteration step sizes: constant, or geometric decay to ``lr_final``."""
        if self.lr_final is None or self.iterations == 1:
            return np.full(self.iterations, float(self.learning_rate))
        return np.geomspace(self.learning_rate, self.lr_final, self.iterations)


@dataclass(eq=False)
class FitResult:
    final_state: VariationalState
    elbo_trace: np.ndarray
    final_elbo: float
    final_elbo_std_error: float
    point_estimate: MixingMeasure
    config: FitConfig

    @property
    def K(self) -> int:
        return self.final_state.K

    def to_dict(self, trace_every: int = 100) -> dict:
        return {
            "final_elbo": self.final_elbo,
            "final_elbo_std_error": self.final_elbo_std_error,
            "elbo_trace": self.elbo_trace[::trace_every].tolist(),
            "trace_every": trace_every,
            "variational": self.final_state.to_dict(),
            "config": asdict(self.config),
        }

    def to_json(self, path, trace_every: int = 100) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(trace_every), fh, indent=2)


def _log_joint_batch(theta, x, y, K, d, family, prior: PriorConfig, want_grad=True):
    """Log joint density and gradient for a batch of flat parameter vectors.

    ``theta`` has shape (S, P). Returns values (S,) and gradients (S, P).
    """
    S = theta.shape[0]
    p = family.n_params(d)
    sl = theta_slices(K, d, p)
    a0 = theta[:, sl["alpha0"]]
    a1 = theta[:, sl["alpha1"]].reshape(S, K, d)
    beta = theta[:, sl["beta"]].reshape(S, K, p)
    u = theta[:, sl["log_sigma2"]]

    pv = prior.prior_vars(K, d, family)
    coefs = theta[:, : sl["beta"].stop]
    lp = -0.5 * np.sum(np.log(2.0 * np.pi * pv)) - 0.5 * np.sum(coefs**2 / pv, axis=1)
    a, b = prior.ig_shape, prior.ig_rate
    inv_s2 = np.exp(-u)
    lp = lp + np.sum(a * np.log(b) - gammaln(a) - a * u - b * inv_s2, axis=1)

    grad = np.empty_like(theta) if want_grad else None
    if want_grad:
        grad[:, : sl["beta"].stop] = -coefs / pv
        grad[:, sl["log_sigma2"]] = -a + b * inv_s2

    if x.shape[0] == 0:
        return lp, grad

    logits = a0[:, None, :] + np.einsum("nd,skd->snk", x, a1)
    log_gate = logits - logsumexp(logits, axis=2, keepdims=True)
    resid = y[None, :, None] - family.mean(x, beta)
    sq = resid**2 * inv_s2[:, None, :]
    lj = log_gate - 0.5 * (LOG_2PI + u[:, None, :]) - 0.5 * sq
    ll = logsumexp(lj, axis=2)
    value = lp + ll.sum(axis=1)
    if not want_grad:
        return value, None

    resp = np.exp(lj - ll[:, :, None])
    dlogit = resp - np.exp(log_gate)
    grad[:, sl["alpha0"]] += dlogit.sum(axis=1)
    grad[:, sl["alpha1"]] += np.einsum("snk,nd->skd", dlogit, x).reshape(S, K * d)
    w_mu = resp * resid * inv_s2[:, None, :]
    grad[:, sl["beta"]] += family.contract(x, beta, w_mu).reshape(S, K * p)
    grad[:, sl["log_sigma2"]] += np.sum(resp * (0.5 * sq - 0.5), axis=1)
    return value, grad


def log_joint(theta, data: Dataset, K: int, family="linear", prior: PriorConfig = PriorConfig()) -> float:
    """log p(data | theta) + log prior(theta), theta with log-variances.

    The Inverse-Gamma prior on each variance is expressed on the log scale,
    so it includes the Jacobian term log sigma2.
    """
    fam = get_family(family)
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    val, _ = _log_joint_batch(theta[None, :], data.x, data.y, K, data.d, fam, prior, want_grad=False)
    return float(val[0])


def log_joint_grad(theta, data: Dataset, K: int, family="linear",
                   prior: PriorConfig = PriorConfig()) -> tuple[float, np.ndarray]:
    fam = get_family(family)
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    val, g = _log_joint_batch(theta[None, :], data.x, data.y, K, data.d, fam, prior)
    return float(val[0]), g[0]


def _draws(q: VariationalState, S: int, seed):
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((S, q.size))
    return eps, q.mean + eps * q.std


def _elbo_terms(q, eps, theta, data, prior, want_grad):
    vals, grads = _log_joint_batch(theta, data.x, data.y, q.K, q.d, q.family, prior, want_grad)
    # exact Gaussian entropy; same expectation as -log q(theta), no extra noise
    entropy = float(np.sum(0.5 * (LOG_2PI + 1.0) + q.log_std))
    return vals + entropy, grads


def elbo_estimate(q: VariationalState, data: Dataset, prior: PriorConfig = PriorConfig(),
                  S: int = 200, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo ELBO and its standard error (NaN for S=1)."""
    if S < 1:
        raise ValueError("S must be >= 1")
    eps, theta = _draws(q, S, seed)
    terms, _ = _elbo_terms(q, eps, theta, data, prior, want_grad=False)
    se = float(np.std(terms, ddof=1) / np.sqrt(S)) if S > 1 else float("nan")
    return float(np.mean(terms)), se


def elbo_value_and_gradient(q: VariationalState, data: Dataset, prior: PriorConfig = PriorConfig(),
                            S: int = 1, seed: int = 0):
    """Pathwise ELBO gradient with respect to (mean, log_std).

    Returns ``(value, grad_mean, grad_log_std)``; the value uses the same
    draws as the gradient.
    """
    eps, theta = _draws(q, S, seed)
    terms, g = _elbo_terms(q, eps, theta, data, prior, want_grad=True)
    grad_mean = g.mean(axis=0)
    grad_log_std = (g * eps).mean(axis=0) * q.std + 1.0
    return float(terms.mean()), grad_mean, grad_log_std


def elbo_gradient(q: VariationalState, data: Dataset, prior: PriorConfig = PriorConfig(),
                  S: int = 1, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    _, gm, gs = elbo_value_and_gradient(q, data, prior, S, seed)
    return gm, gs


def init_state(K: int, d: int, family, seed, scale: float = 0.1) -> VariationalState:
    """Means ~ N(0, scale^2), log-std = log(scale)."""
    fam = get_family(family)
    P = theta_size(K, d, fam.n_params(d))
    rng = np.random.default_rng(seed)
    return VariationalState(rng.normal(0.0, scale, size=P), np.full(P, np.log(scale)), K, d, fam)


def point_estimate_from_state(q: VariationalState, bounds: ParamBounds = DEFAULT_BOUNDS) -> MixingMeasure:
    return unpack(q.mean, q.K, q.d, q.family, bounds=bounds)


def _offending_block(q: VariationalState, *arrays) -> str:
    sl = theta_slices(q.K, q.d, q.family.n_params(q.d))
    for name, s in sl.items():
        if any(not np.all(np.isfinite(a[s])) for a in arrays):
            return name
    return "unknown"


def _kernel_constants(K, d, fam, prior):
    pv = prior.prior_vars(K, d, fam)
    a, b = prior.ig_shape, prior.ig_rate
    lp_const = -0.5 * float(np.sum(np.log(2.0 * np.pi * pv))) + K * (a * np.log(b) - gammaln(a))
    return pv, float(lp_const)


def fit(data: Dataset, K: int, prior: PriorConfig = PriorConfig(), cfg: FitConfig = FitConfig(),
        family="linear", bounds: ParamBounds = DEFAULT_BOUNDS, backend: str = "compiled") -> FitResult:
    """Maximise the ELBO with Adam.

    Three child streams of ``cfg.seed`` drive, in order, the initialisation,
    the per-step draws and the final ELBO estimate. ``backend="numpy"`` runs
    the reference loop; the compiled loop consumes the same draws and is
    used whenever one draw per step is requested.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    fam = get_family(family)
    d = data.d
    init_ss, step_ss, final_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    q0 = init_state(K, d, fam, init_ss, cfg.init_scale)
    m = q0.mean.copy()
    s = q0.log_std.copy()
    P = m.shape[0]
    x, y = np.ascontiguousarray(data.x), np.ascontiguousarray(data.y)
    S = cfg.mc_samples_per_step
    rng = np.random.default_rng(step_ss)
    b1, b2, ae = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    lrs = cfg.learning_rates()
    trace = np.empty(cfg.iterations)
    if backend == "compiled" and S == 1:
        from . import _kernels

        eps_all = rng.standard_normal((cfg.iterations, P))
        pv, lp_const = _kernel_constants(K, d, fam, prior)
        status = _kernels.adam_loop(m, s, eps_all, x, y, K, d, fam.n_params(d),
                                    _kernels.FAMILY_CODES[fam.name], pv, lp_const,
                                    prior.ig_shape, prior.ig_rate, lrs, b1, b2, ae, trace)
        if status:
            t = int(status)
            theta = m + eps_all[t - 1] * np.exp(s)
            _, g = _log_joint_batch(theta[None, :], x, y, K, d, fam, prior)
            q_bad = VariationalState(np.nan_to_num(m), np.nan_to_num(s), K, d, fam)
            raise FitAborted(t, _offending_block(q_bad, theta, g[0]))
    elif backend in ("compiled", "numpy"):
        mom = np.zeros(2 * P)
        vel = np.zeros(2 * P)
        for t in range(1, cfg.iterations + 1):
            eps = rng.standard_normal((S, P))
            std = np.exp(s)
            theta = m + eps * std
            vals, g = _log_joint_batch(theta, x, y, K, d, fam, prior)
            elbo = float(np.mean(vals) + np.sum(0.5 * (LOG_2PI + 1.0) + s))
            gm = g.mean(axis=0)
            gs = (g * eps).mean(axis=0) * std + 1.0
            trace[t - 1] = elbo
            if not (np.isfinite(elbo) and np.all(np.isfinite(gm)) and np.all(np.isfinite(gs))):
                q_bad = VariationalState(np.nan_to_num(m), np.nan_to_num(s), K, d, fam)
                raise FitAborted(t, _offending_block(q_bad, theta[0], gm, gs))
            grad = np.concatenate([gm, gs])
            mom = b1 * mom + (1.0 - b1) * grad
            vel = b2 * vel + (1.0 - b2) * grad * grad
            step = lrs[t - 1] * (mom / (1.0 - b1**t)) / (np.sqrt(vel / (1.0 - b2**t)) + ae)
            m = m + step[:P]
            s = s + step[P:]
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
        raise FitAborted(cfg.iterations, "final", "non-finite variational parameters after optimisation")
    q = VariationalState(m, s, K, d, fam)
    final, se = elbo_estimate(q, data, prior, cfg.final_elbo_samples, final_ss)
    if not np.isfinite(final):
        raise FitAborted(cfg.iterations, "final", "non-finite final ELBO estimate")
    return FitResult(q, trace, final, se, point_estimate_from_state(q, bounds), cfg)

"""Softmax-gated mixture of Gaussian experts.

A mixing measure holds K atoms. Atom j carries a log-weight ``alpha0[j]``,
a gating slope ``alpha1[j]``, expert parameters ``beta[j]`` and a variance
``sigma2[j]``. The conditional density is

    f_G(y | x) = sum_j softmax_j(alpha0 + x @ alpha1.T) N(y | E(x, beta_j), sigma2_j)

and covariates are uniform on [-1, 1]^d.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .experts import ExpertFamily, get_family

LOG_2PI = float(np.log(2.0 * np.pi))


class DimensionError(ValueError):
    pass


class BoundsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ParamBounds:
    """Compact parameter box. ``coef`` bounds alpha0, alpha1 and beta coordinates."""

    coef_min: float = -20.0
    coef_max: float = 20.0
    sigma2_min: float = 1e-3
    sigma2_max: float = 1e3

    def __post_init__(self):
        vals = (self.coef_min, self.coef_max, self.sigma2_min, self.sigma2_max)
        if not all(np.isfinite(vals)):
            raise ValueError("parameter bounds must be finite")
        if self.sigma2_min <= 0:
            raise ValueError("sigma2_min must be positive")
        if self.coef_min >= self.coef_max or self.sigma2_min >= self.sigma2_max:
            raise ValueError("empty parameter box")

    def theta_box(self, K: int, d: int, p: int) -> tuple[np.ndarray, np.ndarray]:
        """Lower/upper limits for the flat vector with log-variances."""
        n_coef = K * (1 + d + p)
        lo = np.concatenate([np.full(n_coef, self.coef_min), np.full(K, np.log(self.sigma2_min))])
        hi = np.concatenate([np.full(n_coef, self.coef_max), np.full(K, np.log(self.sigma2_max))])
        return lo, hi


DEFAULT_BOUNDS = ParamBounds()


@dataclass(frozen=True)
class ExpertComponent:
    alpha0: float
    alpha1: np.ndarray
    beta: np.ndarray
    sigma2: float


@dataclass(frozen=True, eq=False)
class MixingMeasure:
    """Immutable container for SMoGE parameters.

    Arrays are copied and made read-only on construction.
    """

    alpha0: np.ndarray
    alpha1: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    family: ExpertFamily = field(default=None)

    def __post_init__(self):
        fam = get_family(self.family if self.family is not None else "linear")
        a0 = np.array(self.alpha0, dtype=float).reshape(-1)
        K = a0.shape[0]
        if K < 1:
            raise ValueError("a mixing measure needs at least one component")
        a1 = np.array(self.alpha1, dtype=float).reshape(K, -1)
        d = a1.shape[1]
        if d < 1:
            raise DimensionError("input dimension must be positive")
        p = fam.n_params(d)
        b = np.array(self.beta, dtype=float).reshape(K, -1)
        if b.shape[1] != p:
            raise DimensionError(f"{fam.name} expert with d={d} needs {p} params, got {b.shape[1]}")
        s2 = np.array(self.sigma2, dtype=float).reshape(-1)
        if s2.shape[0] != K:
            raise DimensionError("sigma2 length does not match number of components")
        if np.any(s2 <= 0):
            raise ValueError("expert variances must be positive")
        for name, arr in (("alpha0", a0), ("alpha1", a1), ("beta", b), ("sigma2", s2)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite {name}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "family", fam)

    @property
    def K(self) -> int:
        return self.alpha0.shape[0]

    @property
    def d(self) -> int:
        return self.alpha1.shape[1]

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.alpha0)

    @property
    def omega(self) -> np.ndarray:
        """Atom locations (alpha1, beta, sigma2) stacked row-wise."""
        return np.concatenate([self.alpha1, self.beta, self.sigma2[:, None]], axis=1)

    @property
    def components(self) -> list[ExpertComponent]:
        return [
            ExpertComponent(float(self.alpha0[j]), self.alpha1[j], self.beta[j], float(self.sigma2[j]))
            for j in range(self.K)
        ]

    @classmethod
    def from_components(cls, components, family="linear") -> "MixingMeasure":
        comps = list(components)
        return cls(
            alpha0=[c.alpha0 for c in comps],
            alpha1=[np.atleast_1d(c.alpha1) for c in comps],
            beta=[np.atleast_1d(c.beta) for c in comps],
            sigma2=[c.sigma2 for c in comps],
            family=family,
        )

    def replace(self, **kw) -> "MixingMeasure":
        args = dict(alpha0=self.alpha0, alpha1=self.alpha1, beta=self.beta,
                    sigma2=self.sigma2, family=self.family)
        args.update(kw)
        return MixingMeasure(**args)

    def permute(self, order) -> "MixingMeasure":
        order = np.asarray(order)
        return self.replace(alpha0=self.alpha0[order], alpha1=self.alpha1[order],
                            beta=self.beta[order], sigma2=self.sigma2[order])

    def is_normalized(self) -> bool:
        """Last component carries zero gating parameters."""
        return self.alpha0[-1] == 0.0 and bool(np.all(self.alpha1[-1] == 0.0))

    def in_bounds(self, bounds: ParamBounds = DEFAULT_BOUNDS) -> bool:
        coefs = np.concatenate([self.alpha0, self.alpha1.ravel(), self.beta.ravel()])
        return bool(
            np.all(coefs >= bounds.coef_min) and np.all(coefs <= bounds.coef_max)
            and np.all(self.sigma2 >= bounds.sigma2_min) and np.all(self.sigma2 <= bounds.sigma2_max)
        )

    def allclose(self, other: "MixingMeasure", atol: float = 0.0) -> bool:
        return (
            self.family == other.family and self.K == other.K and self.d == other.d
            and np.allclose(self.alpha0, other.alpha0, rtol=0, atol=atol)
            and np.allclose(self.alpha1, other.alpha1, rtol=0, atol=atol)
            and np.allclose(self.beta, other.beta, rtol=0, atol=atol)
            and np.allclose(self.sigma2, other.sigma2, rtol=0, atol=atol)
        )

    def __repr__(self) -> str:
        return f"MixingMeasure(K={self.K}, d={self.d}, family={self.family.name})"


def _as_points(G: MixingMeasure, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    if x.ndim == 1:
        x = x[None, :] if G.d > 1 or x.shape[0] == 1 else x[:, None]
    if x.shape[-1] != G.d:
        raise DimensionError(f"covariate dimension {x.shape[-1]} does not match d={G.d}")
    return x


def gating_logits(G: MixingMeasure, x: np.ndarray) -> np.ndarray:
    return G.alpha0 + x @ G.alpha1.T


def log_gate_weights(G: MixingMeasure, x) -> np.ndarray:
    x = _as_points(G, x)
    logits = gating_logits(G, x)
    return logits - logsumexp(logits, axis=1, keepdims=True)


def gate_weights(G: MixingMeasure, x) -> np.ndarray:
    """Softmax gating weights at a single point (K,) or a batch (n, K)."""
    single = np.ndim(x) <= 1 and (np.size(x) == G.d)
    x = _as_points(G, x)
    logits = gating_logits(G, x)
    logits = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if single else w


def component_log_densities(G: MixingMeasure, y, x) -> np.ndarray:
    """log N(y_i | E(x_i, beta_j), sigma2_j) as an (n, K) array."""
    x = _as_points(G, x)
    y = np.asarray(y, dtype=float).reshape(-1)
    mu = G.family.mean(x, G.beta)
    return -0.5 * (LOG_2PI + np.log(G.sigma2)) - 0.5 * (y[:, None] - mu) ** 2 / G.sigma2


def log_conditional_density(G: MixingMeasure, y, x) -> np.ndarray:
    x = _as_points(G, x)
    y = np.broadcast_to(np.asarray(y, dtype=float).reshape(-1), (x.shape[0],))
    return logsumexp(log_gate_weights(G, x) + component_log_densities(G, y, x), axis=1)


def conditional_density(G: MixingMeasure, y, x):
    """f_G(y | x). Scalar in, scalar out; arrays are evaluated row-wise."""
    scalar = np.ndim(y) == 0 and np.size(x) == G.d
    out = np.exp(log_conditional_density(G, y, x))
    return float(out[0]) if scalar else out


def in_cube(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.all((x >= -1.0) & (x <= 1.0), axis=-1)


def joint_density(G: MixingMeasure, y, x):
    """g_G(y, x) = f_G(y | x) 2^{-d} on the cube and zero outside it."""
    scalar = np.ndim(y) == 0 and np.size(x) == G.d
    xs = _as_points(G, x)
    out = np.exp(log_conditional_density(G, y, xs) - G.d * np.log(2.0))
    out = np.where(in_cube(xs), out, 0.0)
    return float(out[0]) if scalar else out


def log_likelihood(G: MixingMeasure, data) -> float:
    """Sum of log f_G(y_i | x_i) over a Dataset (0 for an empty one)."""
    if data.n == 0:
        return 0.0
    return float(np.sum(log_conditional_density(G, data.y, data.x)))


def translate_gating(G: MixingMeasure, t0: float, t1, bounds: ParamBounds = DEFAULT_BOUNDS) -> MixingMeasure:
    """Shift every alpha0 by t0 and every alpha1 by t1.

    Gating weights and densities are unchanged; the atom weights exp(alpha0)
    are not. A ``BoundsWarning`` is issued if the result leaves ``bounds``.
    """
    t1 = np.broadcast_to(np.asarray(t1, dtype=float), (G.d,))
    out = G.replace(alpha0=G.alpha0 + t0, alpha1=G.alpha1 + t1)
    if G.in_bounds(bounds) and not out.in_bounds(bounds):
        warnings.warn("translated gating parameters leave the parameter box", BoundsWarning, stacklevel=2)
    return out


def normalize_gating(G: MixingMeasure) -> MixingMeasure:
    """Translate so the last component has alpha0 = 0 and alpha1 = 0."""
    out = G.replace(alpha0=G.alpha0 - G.alpha0[-1], alpha1=G.alpha1 - G.alpha1[-1])
    return out


# flat parameter vectors: [alpha0 (K), alpha1 (K*d), beta (K*p), log sigma2 (K)]

def theta_size(K: int, d: int, p: int) -> int:
    return K * (2 + d + p)


def theta_slices(K: int, d: int, p: int) -> dict[str, slice]:
    a = K
    b = a + K * d
    c = b + K * p
    return {"alpha0": slice(0, a), "alpha1": slice(a, b), "beta": slice(b, c), "log_sigma2": slice(c, c + K)}


def pack(G: MixingMeasure) -> np.ndarray:
    return np.concatenate([G.alpha0, G.alpha1.ravel(), G.beta.ravel(), np.log(G.sigma2)])


def unpack(theta, K: int, d: int, family="linear", bounds: ParamBounds | None = None) -> MixingMeasure:
    fam = get_family(family)
    p = fam.n_params(d)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (theta_size(K, d, p),):
        raise DimensionError(f"expected flat vector of size {theta_size(K, d, p)}, got {theta.shape}")
    sl = theta_slices(K, d, p)
    s2 = np.exp(theta[sl["log_sigma2"]])
    if bounds is not None:
        s2 = np.clip(s2, bounds.sigma2_min, bounds.sigma2_max)
    return MixingMeasure(
        alpha0=theta[sl["alpha0"]],
        alpha1=theta[sl["alpha1"]].reshape(K, d),
        beta=theta[sl["beta"]].reshape(K, p),
        sigma2=s2,
        family=fam,
    )

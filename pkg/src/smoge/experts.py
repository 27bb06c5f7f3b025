"""Expert mean functions E(x, beta).

Each family evaluates a batch of covariates against a batch of parameter
vectors and exposes analytic first and second derivatives in ``beta``. The
derivatives drive both the pathwise ELBO gradient and the identifiability
rank tests.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as _expit


class ExpertFamily:
    """Base class for a mean-function family.

    Parameters are laid out as rows of a ``(K, p)`` array. ``mean`` maps
    ``x`` of shape ``(n, d)`` and ``beta`` of shape ``(..., K, p)`` to an
    ``(..., n, K)`` array.
    """

    name = "base"

    def n_params(self, d: int) -> int:
        raise NotImplementedError

    def mean(self, x: np.ndarray, beta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """Jacobian dE/dbeta with shape ``(n, K, p)``."""
        raise NotImplementedError

    def contract(self, x: np.ndarray, beta: np.ndarray, w: np.ndarray) -> np.ndarray:
        """sum_n w[..., n, k] dE(x_n, beta_k)/dbeta, without forming the full Jacobian.

        ``beta`` may carry leading batch axes, ``(..., K, p)``, matched by ``w``
        of shape ``(..., n, K)``.
        """
        raise NotImplementedError

    def hessian(self, x: np.ndarray, beta: np.ndarray) -> np.ndarray:
        """Second derivatives for a single parameter vector, shape ``(n, p, p)``."""
        raise NotImplementedError

    def lipschitz(self, d: int) -> float:
        """Lipschitz constant in beta, uniform over x in [-1, 1]^d."""
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"

    def __eq__(self, other) -> bool:
        return isinstance(other, ExpertFamily) and other.name == self.name

    def __hash__(self) -> int:
        return hash(self.name)


class LinearExpert(ExpertFamily):
    """E(x, beta) = beta0 + x @ beta1 with beta = (beta0, beta1)."""

    name = "linear"

    def n_params(self, d):
        return d + 1

    def mean(self, x, beta):
        return beta[..., None, :, 0] + np.einsum("nd,...kd->...nk", x, beta[..., 1:])

    def grad(self, x, beta):
        n, K = x.shape[0], beta.shape[0]
        feats = np.concatenate([np.ones((n, 1)), x], axis=1)
        return np.broadcast_to(feats[:, None, :], (n, K, feats.shape[1]))

    def contract(self, x, beta, w):
        return np.concatenate([w.sum(axis=-2)[..., None], np.einsum("...nk,nd->...kd", w, x)], axis=-1)

    def hessian(self, x, beta):
        p = x.shape[1] + 1
        return np.zeros((x.shape[0], p, p))

    def lipschitz(self, d):
        return float(np.sqrt(1.0 + d))


class SigmoidExpert(ExpertFamily):
    """E(x, beta) = 1 / (1 + exp(-x @ beta)), no intercept."""

    name = "sigmoid"

    def n_params(self, d):
        return d

    def mean(self, x, beta):
        return _expit(np.einsum("nd,...kd->...nk", x, beta))

    def grad(self, x, beta):
        s = _expit(x @ beta.T)
        return (s * (1.0 - s))[:, :, None] * x[:, None, :]

    def contract(self, x, beta, w):
        s = _expit(np.einsum("nd,...kd->...nk", x, beta))
        return np.einsum("...nk,nd->...kd", w * s * (1.0 - s), x)

    def hessian(self, x, beta):
        s = _expit(x @ beta.reshape(-1))
        curv = s * (1.0 - s) * (1.0 - 2.0 * s)
        return curv[:, None, None] * x[:, :, None] * x[:, None, :]

    def lipschitz(self, d):
        # |s'| <= 1/4 and ||x|| <= sqrt(d) on the cube
        return 0.25 * float(np.sqrt(d))


class ConstantExpert(ExpertFamily):
    """E(x, c) = c."""

    name = "constant"

    def n_params(self, d):
        return 1

    def mean(self, x, beta):
        shape = beta.shape[:-2] + (x.shape[0], beta.shape[-2])
        return np.broadcast_to(beta[..., None, :, 0], shape)

    def grad(self, x, beta):
        return np.ones((x.shape[0], beta.shape[0], 1))

    def contract(self, x, beta, w):
        return w.sum(axis=-2)[..., None]

    def hessian(self, x, beta):
        return np.zeros((x.shape[0], 1, 1))

    def lipschitz(self, d):
        return 1.0


LINEAR = LinearExpert()
SIGMOID = SigmoidExpert()
CONSTANT = ConstantExpert()

FAMILIES = {f.name: f for f in (LINEAR, SIGMOID, CONSTANT)}


def get_family(family) -> ExpertFamily:
    if isinstance(family, ExpertFamily):
        return family
    try:
        return FAMILIES[str(family).lower()]
    except KeyError:
        raise ValueError(f"unknown expert family {family!r}; choose from {sorted(FAMILIES)}") from None


def expert_mean(family, beta, x) -> float:
    """Evaluate a single expert at a single covariate vector."""
    fam = get_family(family)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if fam is SIGMOID and beta.shape[0] != x.shape[0]:
        raise ValueError(f"sigmoid expert expects {x.shape[0]} weights, got {beta.shape[0]}")
    if fam is LINEAR and beta.shape[0] != x.shape[0] + 1:
        raise ValueError(f"linear expert expects {x.shape[0] + 1} params, got {beta.shape[0]}")
    return float(fam.mean(x[None, :], beta[None, :])[0, 0])

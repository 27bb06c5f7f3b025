"""Datasets and synthetic data-generating processes.

Besides sampling from a SMoGE model directly, three hard-gated processes
are provided. They use deterministic expert assignment and linear Gaussian
experts:

* ``b2``: d=2, two experts, expert 1 iff x1 > x2.
* ``b3``: d=6, four experts, expert = argmax of the first four covariates.
* ``b4``: max-logit gating with a diagonal weight matrix scaled by a
  separation constant; (d, k_star) in {(2, 1), (2, 2), (4, 3)}.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import MixingMeasure, gate_weights


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise ValueError("x and y have different numbers of rows")
        if x.size and (np.any(x < -1.0) or np.any(x > 1.0)):
            raise ValueError("covariates must lie in [-1, 1]^d")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.z is not None:
            z = np.array(self.z, dtype=int).reshape(-1)
            z.setflags(write=False)
            object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        z = None if self.z is None else self.z[idx]
        return Dataset(self.x[idx], self.y[idx], z, dict(self.provenance))

    def concat(self, other: "Dataset") -> "Dataset":
        z = None
        if self.z is not None and other.z is not None:
            z = np.concatenate([self.z, other.z])
        return Dataset(np.vstack([self.x, other.x]), np.concatenate([self.y, other.y]), z, dict(self.provenance))

    def to_csv(self, path) -> None:
        """Write ``x1..xd,y,z`` rows plus a ``<path>.provenance.json`` sidecar."""
        path = Path(path)
        z = self.z if self.z is not None else np.full(self.n, -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(self.d)] + ["y", "z"])
            for i in range(self.n):
                w.writerow([f"{v:.17g}" for v in self.x[i]] + [f"{self.y[i]:.17g}", int(z[i])])
        with open(str(path) + ".provenance.json", "w") as fh:
            json.dump(self.provenance, fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        d = sum(1 for h in header if h.startswith("x"))
        arr = np.array(body, dtype=float).reshape(len(body), len(header))
        z = arr[:, d + 1].astype(int) if header[-1] == "z" else None
        if z is not None and np.all(z == -1):
            z = None
        prov_path = Path(str(path) + ".provenance.json")
        prov = json.loads(prov_path.read_text()) if prov_path.exists() else {}
        return cls(arr[:, :d].reshape(len(body), d), arr[:, d], z, prov)


def empty_dataset(d: int) -> Dataset:
    return Dataset(np.zeros((0, d)), np.zeros(0))


@dataclass(frozen=True, eq=False)
class DgpSpec:
    """Which process to simulate from; build with the classmethods."""

    kind: str
    measure: MixingMeasure | None = None
    separation: float | None = None
    d: int | None = None
    k_star: int | None = None

    @classmethod
    def smoge(cls, G: MixingMeasure) -> "DgpSpec":
        return cls("smoge", measure=G, d=G.d, k_star=G.K)

    @classmethod
    def b2(cls) -> "DgpSpec":
        return cls("b2", d=2, k_star=2)

    @classmethod
    def b3(cls) -> "DgpSpec":
        return cls("b3", d=6, k_star=4)

    @classmethod
    def b4(cls, separation: float, d: int, k_star: int) -> "DgpSpec":
        spec = cls("b4", separation=float(separation), d=int(d), k_star=int(k_star))
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.kind not in ("smoge", "b2", "b3", "b4"):
            raise ConfigurationError(f"unknown DGP {self.kind!r}")
        if self.kind == "smoge" and self.measure is None:
            raise ConfigurationError("smoge DGP needs a mixing measure")
        if self.kind == "b4":
            if self.separation is None or not self.separation > 0:
                raise ConfigurationError("b4 separation must be positive")
            if (self.d, self.k_star) not in B4_CONFIGS:
                raise ConfigurationError(f"b4 (d, k_star) must be one of {sorted(B4_CONFIGS)}")

    def describe(self) -> dict:
        out = {"dgp": self.kind, "d": self.d, "k_star": self.k_star}
        if self.kind == "b4":
            out["separation"] = self.separation
        return out


B4_CONFIGS = {(2, 1), (2, 2), (4, 3)}

B2_BETA = np.array([[2.0, 1.0, 1.0], [-2.0, -1.0, -1.0]])
B2_SIGMA2 = np.array([1.0, 2.0])


def _uniform_x(rng, n, d):
    return rng.uniform(-1.0, 1.0, size=(n, d))


def sample_smoge(G: MixingMeasure, n: int, seed: int) -> Dataset:
    """Draw n iid pairs from g_G; z records the (1-based) sampled component."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    x = _uniform_x(rng, n, G.d)
    if n == 0:
        z = np.zeros(0, dtype=int)
    else:
        w = gate_weights(G, x).reshape(n, G.K)
        u = rng.uniform(size=(n, 1))
        z = np.minimum((np.cumsum(w, axis=1) < u).sum(axis=1), G.K - 1)
    mu = G.family.mean(x, G.beta)[np.arange(n), z] if n else np.zeros(0)
    y = mu + np.sqrt(G.sigma2[z]) * rng.standard_normal(n)
    prov = {"dgp": "smoge", "seed": int(seed), "measure": measure_to_dict(G)}
    return Dataset(x, y, z + 1, prov)


def b3_experts(rng) -> tuple[np.ndarray, np.ndarray]:
    K, d = 4, 6
    signs = np.array([(-1.0) ** k for k in range(K)])
    slopes = np.zeros((K, d))
    slopes[np.arange(K), np.arange(K)] = 2.0 * signs
    slopes += rng.normal(0.0, 0.2, size=(K, d))
    beta = np.column_stack([2.0 * signs, slopes])
    return beta, np.linspace(1.0, 2.0, K)


def b4_experts(rng, d, k_star) -> tuple[np.ndarray, np.ndarray]:
    signs = np.array([(-1.0) ** k for k in range(k_star)])
    slopes = np.zeros((k_star, d))
    slopes[np.arange(k_star), np.arange(k_star)] = 2.0 * signs
    slopes += rng.normal(0.0, 0.3, size=(k_star, d))
    beta = np.column_stack([np.linspace(-2.0, 2.0, k_star), slopes])
    return beta, np.full(k_star, 0.8)


def b4_gating(separation: float, d: int, k_star: int) -> tuple[np.ndarray, np.ndarray]:
    """Weight matrix (k_star, d) and biases of the max-logit assignment."""
    W = np.zeros((k_star, d))
    W[np.arange(k_star), np.arange(k_star)] = separation
    b = -0.2 * separation * np.arange(1, k_star + 1)
    return W, b


def hard_assign(spec: DgpSpec, x: np.ndarray) -> np.ndarray:
    """0-based expert index for each row of x under a hard-gated DGP."""
    if spec.kind == "b2":
        return np.where(x[:, 0] > x[:, 1], 0, 1)
    if spec.kind == "b3":
        return np.argmax(x[:, :4], axis=1)
    if spec.kind == "b4":
        W, b = b4_gating(spec.separation, spec.d, spec.k_star)
        return np.argmax(x @ W.T + b, axis=1)
    raise ConfigurationError(f"{spec.kind} is not hard-gated")


def sample_dgp(spec: DgpSpec, n: int, seed: int) -> Dataset:
    """Simulate one replication.

    For ``b3``/``b4`` the slope noise is drawn first from a child stream of
    ``seed`` and then the data from a second child stream, so the true
    experts differ between replications but are fixed within one.
    """
    spec.validate()
    if n < 0:
        raise ValueError("n must be non-negative")
    if spec.kind == "smoge":
        data = sample_smoge(spec.measure, n, seed)
        return data
    param_ss, data_ss = np.random.SeedSequence(seed).spawn(2)
    param_rng = np.random.default_rng(param_ss)
    rng = np.random.default_rng(data_ss)
    if spec.kind == "b2":
        beta, sigma2 = B2_BETA.copy(), B2_SIGMA2.copy()
    elif spec.kind == "b3":
        beta, sigma2 = b3_experts(param_rng)
    else:
        beta, sigma2 = b4_experts(param_rng, spec.d, spec.k_star)
    x = _uniform_x(rng, n, spec.d)
    z = hard_assign(spec, x) if n else np.zeros(0, dtype=int)
    mu = beta[z, 0] + np.sum(x * beta[z, 1:], axis=1)
    y = mu + np.sqrt(sigma2[z]) * rng.standard_normal(n)
    prov = dict(spec.describe())
    prov.update(seed=int(seed), beta=beta.tolist(), sigma2=sigma2.tolist())
    if spec.kind == "b4":
        W, b = b4_gating(spec.separation, spec.d, spec.k_star)
        prov.update(gating_W=W.tolist(), gating_b=b.tolist())
    return Dataset(x, y, z + 1, prov)


def measure_to_dict(G: MixingMeasure) -> dict:
    return {
        "d": G.d,
        "family": G.family.name,
        "components": [
            {"alpha0": float(c.alpha0), "alpha1": [float(v) for v in c.alpha1],
             "beta": [float(v) for v in c.beta], "sigma2": float(c.sigma2)}
            for c in G.components
        ],
    }


def measure_from_dict(rec: dict) -> MixingMeasure:
    comps = rec["components"]
    d = int(rec["d"])
    G = MixingMeasure(
        alpha0=[c["alpha0"] for c in comps],
        alpha1=[c["alpha1"] for c in comps],
        beta=[c["beta"] for c in comps],
        sigma2=[c["sigma2"] for c in comps],
        family=rec.get("family", "linear"),
    )
    if G.d != d:
        raise ValueError(f"declared d={d} but gating slopes have dimension {G.d}")
    return G

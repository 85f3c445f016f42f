"""Diagonal-Gaussian base learners and finite mixtures of them.

Every density function accepts either a single point of shape ``(d,)`` and
returns a float, or a batch of shape ``(n, d)`` and returns an array of
shape ``(n,)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

LOG_2PI = float(np.log(2.0 * np.pi))
LOG_STD_MIN = -20.0
LOG_STD_MAX = 20.0

# weights must sum to one within this tolerance
SIMPLEX_TOL = 1e-12


def as_batch(theta, dim):
    """Return ``(theta as (n, dim) float array, was_single_point)``."""
    arr = np.asarray(theta, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {np.shape(theta)}")
    return arr, single


def _frozen(values, name):
    arr = np.array(values, dtype=float).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GaussianComponent:
    """A diagonal Gaussian parameterised by its mean and per-coordinate log std."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean, "mean")
        log_std = _frozen(self.log_std, "log_std")
        if mean.shape != log_std.shape:
            raise ValueError(f"mean has dimension {mean.size} but log_std has {log_std.size}")
        if np.any(log_std < LOG_STD_MIN) or np.any(log_std > LOG_STD_MAX):
            raise ValueError(f"log_std entries must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_std", log_std)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @classmethod
    def standard(cls, dim: int) -> GaussianComponent:
        return cls(np.zeros(dim), np.zeros(dim))

    def __repr__(self):
        return f"GaussianComponent(mean={self.mean.tolist()}, log_std={self.log_std.tolist()})"


def component_log_pdf(c: GaussianComponent, theta):
    """Normalised log-density of a diagonal Gaussian."""
    x, single = as_batch(theta, c.dim)
    z = (x - c.mean) * np.exp(-c.log_std)
    out = -0.5 * np.sum(z * z, axis=1) - np.sum(c.log_std) - 0.5 * c.dim * LOG_2PI
    return float(out[0]) if single else out


def component_grad_log_pdf(c: GaussianComponent, theta):
    x, single = as_batch(theta, c.dim)
    out = -(x - c.mean) * np.exp(-2.0 * c.log_std)
    return out[0] if single else out


def component_entropy(c: GaussianComponent) -> float:
    """Closed-form differential entropy, ``d/2 (1 + ln 2 pi) + sum(log_std)``."""
    return 0.5 * c.dim * (1.0 + LOG_2PI) + float(np.sum(c.log_std))


def reparam_sample(c: GaussianComponent, noise):
    """Map standard-normal ``noise`` to draws from ``c``: ``mean + std * noise``."""
    eps = np.asarray(noise, dtype=float)
    if eps.shape[-1] != c.dim:
        raise ValueError(f"noise has dimension {eps.shape[-1]}, component has {c.dim}")
    return c.mean + np.exp(c.log_std) * eps


@dataclass(frozen=True, eq=False)
class MixtureApprox:
    """Finite mixture of diagonal Gaussians with weights on the simplex."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        dim = comps[0].dim
        if any(c.dim != dim for c in comps):
            raise ValueError("all components must share one dimension")
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size != len(comps):
            raise ValueError(f"{w.size} weights for {len(comps)} components")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)
        means = np.stack([c.mean for c in comps])
        log_stds = np.stack([c.log_std for c in comps])
        means.setflags(write=False)
        log_stds.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "log_stds", log_stds)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "log_weights", np.log(w))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def n_components(self) -> int:
        return len(self.components)

    @classmethod
    def single(cls, c: GaussianComponent) -> MixtureApprox:
        return cls((c,), np.ones(1))

    def __repr__(self):
        return f"MixtureApprox(k={self.n_components}, dim={self.dim}, weights={self.weights.tolist()})"


def component_log_pdfs(q: MixtureApprox, x: np.ndarray) -> np.ndarray:
    """Per-component log-densities for a batch ``x`` of shape (n, d); returns (n, k)."""
    inv_std = np.exp(-q.log_stds)  # (k, d)
    z = (x[:, None, :] - q.means[None, :, :]) * inv_std[None, :, :]
    return (-0.5 * np.sum(z * z, axis=2)
            - np.sum(q.log_stds, axis=1)[None, :]
            - 0.5 * q.dim * LOG_2PI)


def mixture_log_pdf(q: MixtureApprox, theta):
    """Log-density of the mixture via max-shifted log-sum-exp."""
    x, single = as_batch(theta, q.dim)
    out = logsumexp(component_log_pdfs(q, x) + q.log_weights[None, :], axis=1)
    return float(out[0]) if single else out


def mixture_grad_log_pdf(q: MixtureApprox, theta):
    """Score of the mixture: responsibility-weighted component scores."""
    x, single = as_batch(theta, q.dim)
    resp = softmax(component_log_pdfs(q, x) + q.log_weights[None, :], axis=1)  # (n, k)
    scores = -(x[:, None, :] - q.means[None, :, :]) * np.exp(-2.0 * q.log_stds)[None, :, :]
    out = np.einsum("nk,nkd->nd", resp, scores)
    return out[0] if single else out


def mixture_sample_indexed(q: MixtureApprox, rng: np.random.Generator, n: int):
    """Draw ``n`` points; also return the component index each came from."""
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = rng.choice(q.n_components, size=n, p=q.weights)
    noise = rng.standard_normal((n, q.dim))
    return q.means[idx] + np.exp(q.log_stds[idx]) * noise, idx


def mixture_sample(q: MixtureApprox, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` points from the mixture as an (n, d) array."""
    return mixture_sample_indexed(q, rng, n)[0]


def mixture_extend(q: MixtureApprox, h: GaussianComponent, alpha: float) -> MixtureApprox:
    """Return ``(1 - alpha) q + alpha h``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if h.dim != q.dim:
        raise ValueError(f"component dimension {h.dim} does not match mixture dimension {q.dim}")
    w = np.append((1.0 - alpha) * q.weights, alpha)
    # repeated (1 - alpha) products drift off the simplex
    w = w / w.sum()
    return MixtureApprox(q.components + (h,), w)


def mixture_to_dict(q: MixtureApprox) -> dict:
    return {
        "dim": q.dim,
        "weights": [float(w) for w in q.weights],
        "components": [
            {"mean": [float(v) for v in c.mean], "log_std": [float(v) for v in c.log_std]}
            for c in q.components
        ],
    }


def mixture_from_dict(doc: dict) -> MixtureApprox:
    comps = tuple(GaussianComponent(c["mean"], c["log_std"]) for c in doc["components"])
    q = MixtureApprox(comps, doc["weights"])
    if "dim" in doc and int(doc["dim"]) != q.dim:
        raise ValueError(f"document declares dim {doc['dim']} but components have dim {q.dim}")
    return q


def mixture_to_json(q: MixtureApprox, indent: int | None = 2) -> str:
    # json emits repr() floats, which round-trip bit-exactly
    return json.dumps(mixture_to_dict(q), indent=indent)


def mixture_from_json(text: str) -> MixtureApprox:
    return mixture_from_dict(json.loads(text))

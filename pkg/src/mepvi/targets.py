"""Unnormalised target log-densities ``log L(theta)`` with analytic scores.

A target is what the pursuit algorithm approximates: the product of
likelihood and prior, known only up to its normaliser.  The toy targets are
normalised (``log_normalizer = 0`` or known in closed form) so that
divergences can be checked exactly; the algorithm itself never reads
``log_normalizer``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .variational import LOG_2PI, as_batch


@dataclass(frozen=True, eq=False)
class TargetModel:
    """Unnormalised log-density over ``R^dim`` plus its gradient.

    ``log_density`` and ``grad_log_density`` take a point ``(dim,)`` or a
    batch ``(n, dim)``.  ``support_box`` is a tuple of ``(low, high)`` pairs
    used by the quadrature oracles when ``dim <= 2``.
    """

    dim: int
    log_density: Callable
    grad_log_density: Callable
    log_normalizer: float | None = None
    support_box: tuple | None = None
    name: str = "target"


def _vectorised(dim, batch_fn):
    def fn(theta):
        x, single = as_batch(theta, dim)
        out = batch_fn(x)
        return (float(out[0]) if out.ndim == 1 else out[0]) if single else out
    return fn


def make_gaussian_mixture_target(means, diag_vars, weights, name="gaussian_mixture", box_halfwidth=8.0):
    """Normalised mixture of diagonal Gaussians."""
    mu = np.atleast_2d(np.asarray(means, dtype=float))
    var = np.atleast_2d(np.asarray(diag_vars, dtype=float))
    w = np.asarray(weights, dtype=float).reshape(-1)
    if mu.ndim != 2 or mu.shape != var.shape:
        raise ValueError(f"means {mu.shape} and variances {var.shape} must have matching shapes")
    if mu.shape[0] != w.size or w.size < 1:
        raise ValueError(f"{mu.shape[0]} components but {w.size} weights")
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must lie on the simplex (sum={w.sum()!r})")
    dim = mu.shape[1]
    with np.errstate(divide="ignore"):
        log_w = np.log(w)
    inv_var = 1.0 / var
    const = -0.5 * np.sum(np.log(var), axis=1) - 0.5 * dim * LOG_2PI

    def comp_logs(x):
        diff = x[:, None, :] - mu[None, :, :]
        return -0.5 * np.sum(diff * diff * inv_var[None], axis=2) + const[None, :] + log_w[None, :]

    def log_density(x):
        return logsumexp(comp_logs(x), axis=1)

    def grad(x):
        resp = softmax(comp_logs(x), axis=1)
        scores = -(x[:, None, :] - mu[None, :, :]) * inv_var[None]
        return np.einsum("nk,nkd->nd", resp, scores)

    sd = np.sqrt(var)
    lo = np.min(mu - box_halfwidth * sd, axis=0)
    hi = np.max(mu + box_halfwidth * sd, axis=0)
    box = tuple((float(a), float(b)) for a, b in zip(lo, hi))
    return TargetModel(dim, _vectorised(dim, log_density), _vectorised(dim, grad),
                       log_normalizer=0.0, support_box=box, name=name)


def make_banana_target(curvature: float, scale: float, box=None):
    """Warped Gaussian ``-t1^2/(2 s^2) - (t2 - c (t1^2 - s^2))^2 / 2``.

    The shear ``t2 -> t2 - c (t1^2 - s^2)`` has unit Jacobian, so the
    normaliser is ``log(2 pi s)``.
    """
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale!r}")
    c, s = float(curvature), float(scale)

    def log_density(x):
        t1, t2 = x[:, 0], x[:, 1]
        u = t2 - c * (t1 * t1 - s * s)
        return -0.5 * t1 * t1 / (s * s) - 0.5 * u * u

    def grad(x):
        t1, t2 = x[:, 0], x[:, 1]
        u = t2 - c * (t1 * t1 - s * s)
        return np.stack([-t1 / (s * s) + 2.0 * c * t1 * u, -u], axis=1)

    if box is None:
        # the ridge t2 = c (t1^2 - s^2) over |t1| <= 6 s, padded by 6
        ends = sorted([-c * s * s, 35.0 * c * s * s])
        box = ((-6.0 * s, 6.0 * s), (ends[0] - 6.0, ends[1] + 6.0))
    return TargetModel(2, _vectorised(2, log_density), _vectorised(2, grad),
                       log_normalizer=float(np.log(2.0 * np.pi * s)), support_box=tuple(box),
                       name="banana")


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError(f"features must be a non-empty matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"{y.shape} labels for {x.shape[0]} samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite values")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.round(y)):
                raise ValueError("labels must be integer class indices")
        y = y.astype(np.int64)
        if np.any(y < 0) or np.any(y >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, mask) -> LabeledDataset:
        return LabeledDataset(self.features[mask], self.labels[mask], self.n_classes)


def standard_normal_prior(dim):
    def log_pdf(theta):
        x, single = as_batch(theta, dim)
        out = -0.5 * np.sum(x * x, axis=1) - 0.5 * dim * LOG_2PI
        return float(out[0]) if single else out

    def grad(theta):
        return -np.asarray(theta, dtype=float)

    return log_pdf, grad


def logreg_param_dim(n_features: int, n_classes: int) -> int:
    return n_classes * (n_features + 1)


def logreg_logits(theta_batch: np.ndarray, features: np.ndarray, n_classes: int) -> np.ndarray:
    """Logits of shape (n_theta, n_samples, n_classes).

    ``theta`` is the row-major flattening of the (n_classes, n_features + 1)
    matrix whose last column holds the biases.
    """
    f = features.shape[1]
    w = theta_batch.reshape(-1, n_classes, f + 1)
    return np.einsum("sf,tcf->tsc", features, w[:, :, :f]) + w[:, None, :, f]


# bounds the (n_theta, n_samples, n_classes) intermediates
_CHUNK_ELEMS = 4_000_000


def _chunks(n_theta, n_samples, n_classes):
    step = max(1, _CHUNK_ELEMS // max(1, n_samples * n_classes))
    for start in range(0, n_theta, step):
        yield slice(start, min(n_theta, start + step))


def make_logreg_target(data: LabeledDataset, prior_log_pdf=None, prior_grad=None):
    """Multiclass logistic-regression posterior (unnormalised).

    ``log L(theta) = sum_i log softmax(W x_i + b)[y_i] + prior_log_pdf(theta)``.
    The prior defaults to a fully factorised standard normal.
    """
    n_classes, f = data.n_classes, data.n_features
    dim = logreg_param_dim(f, n_classes)
    if prior_log_pdf is None or prior_grad is None:
        if prior_log_pdf is not None or prior_grad is not None:
            raise ValueError("prior_log_pdf and prior_grad must be given together")
        prior_log_pdf, prior_grad = standard_normal_prior(dim)
    x = data.features
    y = data.labels
    x1 = np.hstack([x, np.ones((x.shape[0], 1))])
    onehot = np.eye(n_classes)[y]

    def log_density(theta):
        out = np.empty(theta.shape[0])
        for sl in _chunks(theta.shape[0], x.shape[0], n_classes):
            logp = log_softmax(logreg_logits(theta[sl], x, n_classes), axis=2)
            out[sl] = np.sum(np.take_along_axis(logp, y[None, :, None], axis=2)[..., 0], axis=1)
        return out + np.asarray(prior_log_pdf(theta), dtype=float)

    def grad(theta):
        out = np.empty_like(theta)
        for sl in _chunks(theta.shape[0], x.shape[0], n_classes):
            resid = onehot[None] - softmax(logreg_logits(theta[sl], x, n_classes), axis=2)
            out[sl] = np.einsum("tsc,sf->tcf", resid, x1).reshape(-1, dim)
        return out + np.asarray(prior_grad(theta), dtype=float)

    return TargetModel(dim, _vectorised(dim, log_density), _vectorised(dim, grad), name="logreg")


def _gauss_builder(dim):
    def build(mean=0.0, var=1.0):
        return make_gaussian_mixture_target([np.full(dim, float(mean))], [np.full(dim, float(var))], [1.0],
                                            name=f"gauss{dim}")
    return build


def _two_mode(separation=3.0, var=1.0, weight=0.5):
    return make_gaussian_mixture_target([[-separation], [separation]], [[var], [var]],
                                        [weight, 1.0 - weight], name="two_mode")


def _mixture(means, variances, weights):
    return make_gaussian_mixture_target(means, variances, weights)


def _banana(curvature=1.0, scale=1.0):
    return make_banana_target(curvature, scale)


TARGETS = {
    "gauss1": _gauss_builder(1),
    "gauss2": _gauss_builder(2),
    "two_mode": _two_mode,
    "gaussian_mixture": _mixture,
    "banana": _banana,
}


def build_target(name: str, parameters: dict | None = None) -> TargetModel:
    """Instantiate a registered toy target by name."""
    if name not in TARGETS:
        raise KeyError(f"unknown target {name!r}; choose from {sorted(TARGETS)}")
    return TARGETS[name](**(parameters or {}))

"""Greedy MaxEnt pursuit: grow a Gaussian mixture one component at a time.

Each boosting step fits a new component ``h`` by stochastic gradient ascent
on the entropy-regularised residual objective

    H[h] + lam * E_h[log L(theta) - log q_t(theta)],

picks its weight ``alpha``, and forms ``q_{t+1} = (1 - alpha) q_t + alpha h``.
The step is kept only if the Monte Carlo ELBO improves by more than
``stop_tol``.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import elbo_estimate
from .errors import ConfigError, EstimatorDegenerateError, InitializationError, NonFiniteError
from .variational import (
    LOG_2PI,
    LOG_STD_MAX,
    LOG_STD_MIN,
    GaussianComponent,
    MixtureApprox,
    component_entropy,
    component_log_pdf,
    mixture_extend,
    mixture_grad_log_pdf,
    mixture_log_pdf,
    mixture_sample,
    mixture_sample_indexed,
    reparam_sample,
)

ALPHA_METHODS = ("closed_form", "projected_sgd")

# residual-scored candidate draws used to place a new component
N_INIT_CANDIDATES = 64


@dataclass
class PursuitConfig:
    max_components: int = 5
    steps_per_component: int = 1000
    mc_batch: int = 16
    learn_rate: float = 0.05
    adapt_beta1: float = 0.9
    adapt_beta2: float = 0.999
    adapt_eps: float = 1e-8
    lambda_schedule: tuple[float, ...] = (1.0,)
    alpha_method: str = "closed_form"
    alpha_clip: float = 1e-3
    alpha_samples: int = 4000
    alpha_sgd_steps: int = 200
    alpha_learn_rate: float = 0.05
    elbo_eval_samples: int = 2000
    stop_tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        self.lambda_schedule = tuple(float(v) for v in self.lambda_schedule)
        for key in ("max_components", "steps_per_component", "mc_batch", "alpha_samples",
                    "alpha_sgd_steps", "elbo_eval_samples"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be >= 1")
        if self.elbo_eval_samples < 2:
            raise ConfigError("elbo_eval_samples", "must be >= 2")
        if self.alpha_samples < 2:
            raise ConfigError("alpha_samples", "must be >= 2")
        for key in ("learn_rate", "alpha_learn_rate", "adapt_eps"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, "must be > 0")
        for key in ("adapt_beta1", "adapt_beta2"):
            if not 0 <= getattr(self, key) < 1:
                raise ConfigError(key, "must lie in [0, 1)")
        if not self.lambda_schedule:
            raise ConfigError("lambda_schedule", "needs at least one value")
        if any(not lam > 0 for lam in self.lambda_schedule):
            raise ConfigError("lambda_schedule", "values must be > 0")
        if self.alpha_method not in ALPHA_METHODS:
            raise ConfigError("alpha_method", f"must be one of {ALPHA_METHODS}")
        if not 0 < self.alpha_clip < 0.5:
            raise ConfigError("alpha_clip", "alpha_clip ∈ (0, 0.5) required")
        if self.stop_tol < 0:
            raise ConfigError("stop_tol", "must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")

    def lambda_at(self, step: int) -> float:
        """Temperature for boosting step ``step``; the schedule is cycled."""
        return self.lambda_schedule[step % len(self.lambda_schedule)]


@dataclass
class StepRecord:
    component_index: int
    lambda_used: float
    alpha: float
    elbo_before: float
    elbo_after: float
    accepted: bool
    wall_ms: float


@dataclass
class PursuitTrace:
    steps: list = field(default_factory=list)
    mixture: MixtureApprox | None = None

    @property
    def accepted_steps(self):
        return [s for s in self.steps if s.accepted]


TRACE_COLUMNS = ("step", "lambda", "alpha", "elbo_before", "elbo_after", "accepted", "wall_ms")


def trace_to_csv(trace: PursuitTrace, timing: bool = True) -> str:
    """Render the trace as CSV text.  With ``timing=False`` the wall_ms column is zeroed."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for s in trace.steps:
        writer.writerow([s.component_index, repr(s.lambda_used), repr(s.alpha), repr(s.elbo_before),
                         repr(s.elbo_after), int(s.accepted), repr(round(s.wall_ms, 3)) if timing else "0"])
    return buf.getvalue()


def _residual_and_score(target, q_t, theta):
    resid = np.asarray(target.log_density(theta), dtype=float)
    score = np.asarray(target.grad_log_density(theta), dtype=float)
    if q_t is not None:
        resid = resid - mixture_log_pdf(q_t, theta)
        score = score - mixture_grad_log_pdf(q_t, theta)
    return resid, score


def residual_log_density(target, q_t, lam, theta):
    """``lam * (log L(theta) - log q_t(theta))``, the log of the tempered residual up to a constant."""
    if not lam > 0:
        raise ValueError("lam must be > 0")
    resid = np.asarray(target.log_density(theta), dtype=float)
    if q_t is not None:
        resid = resid - mixture_log_pdf(q_t, theta)
    return lam * resid if resid.ndim else float(lam * resid)


def maxent_objective(h: GaussianComponent, target, q_t, lam: float, noise_batch, entropy="closed_form"):
    """Estimate ``H[h] + lam * mean[log L - log q_t]`` over reparameterised draws.

    ``q_t=None`` drops the ``log q_t`` term (plain ELBO objective for the
    first component).  ``entropy="sample"`` replaces the closed-form entropy
    by ``-mean[log h]`` on the same batch.
    """
    noise = np.atleast_2d(np.asarray(noise_batch, dtype=float))
    theta = reparam_sample(h, noise)
    resid = np.asarray(target.log_density(theta), dtype=float)
    if q_t is not None:
        resid = resid - mixture_log_pdf(q_t, theta)
    if entropy == "closed_form":
        ent = component_entropy(h)
    elif entropy == "sample":
        ent = -float(np.mean(component_log_pdf(h, theta)))
    else:
        raise ValueError(f"unknown entropy mode {entropy!r}")
    return ent + lam * float(np.mean(resid))


def _objective_and_gradient(mean, log_std, target, q_t, lam, noise):
    std = np.exp(log_std)
    theta = mean + std * noise
    resid, g = _residual_and_score(target, q_t, theta)
    entropy = 0.5 * mean.size * (1.0 + LOG_2PI) + float(np.sum(log_std))
    obj = entropy + lam * float(np.mean(resid))
    grad_mean = lam * np.mean(g, axis=0)
    grad_log_std = 1.0 + lam * np.mean(g * noise, axis=0) * std
    return obj, grad_mean, grad_log_std


def maxent_gradient(h: GaussianComponent, target, q_t, lam: float, noise_batch):
    """Pathwise gradient of :func:`maxent_objective` w.r.t. ``(mean, log_std)``."""
    noise = np.atleast_2d(np.asarray(noise_batch, dtype=float))
    _, gm, gs = _objective_and_gradient(h.mean, h.log_std, target, q_t, lam, noise)
    return gm, gs


class AdamAscent:
    """Adaptive-moment gradient ascent with bias-corrected moment estimates."""

    def __init__(self, size, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _initial_component(target, q_t, lam, rng):
    d = target.dim
    if q_t is None:
        return np.zeros(d), np.zeros(d)
    draws, idx = mixture_sample_indexed(q_t, rng, N_INIT_CANDIDATES)
    scores = np.asarray(residual_log_density(target, q_t, lam, draws), dtype=float)
    scores = np.where(np.isfinite(scores), scores, -np.inf)
    if not np.any(np.isfinite(scores)):
        raise InitializationError("every candidate start has a non-finite residual")
    best = int(np.argmax(scores))
    return draws[best].copy(), q_t.log_stds[idx[best]].copy()


def fit_component(target, q_t, lam: float, config: PursuitConfig, rng: np.random.Generator) -> GaussianComponent:
    """Fit one new component by Adam ascent on the MaxEnt objective.

    The first component starts at the standard normal.  Later ones start at
    the best of 64 draws from ``q_t`` ranked by the residual ``log L - log q_t``,
    with the scale of the component that produced the draw.  Returns the
    average of the iterates over the second half of the run.
    """
    d = target.dim
    mean, log_std = _initial_component(target, q_t, lam, rng)
    params = np.concatenate([mean, log_std])
    opt = AdamAscent(2 * d, config.learn_rate, config.adapt_beta1, config.adapt_beta2, config.adapt_eps)
    n_steps = config.steps_per_component
    tail_start = n_steps // 2
    tail_sum = np.zeros_like(params)
    for step in range(n_steps):
        noise = rng.standard_normal((config.mc_batch, d))
        obj, gm, gs = _objective_and_gradient(params[:d], params[d:], target, q_t, lam, noise)
        if step == 0 and not np.isfinite(obj):
            raise InitializationError(
                f"objective is {obj} at the initial component mean={mean.tolist()}, log_std={log_std.tolist()}")
        grad = np.concatenate([gm, gs])
        if not (np.isfinite(obj) and np.all(np.isfinite(grad))):
            raise NonFiniteError(f"non-finite objective or gradient at step {step}", step=step)
        params = opt.step(params, grad)
        params[d:] = np.clip(params[d:], LOG_STD_MIN, LOG_STD_MAX)
        if step >= tail_start:
            tail_sum += params
    avg = tail_sum / (n_steps - tail_start)
    return GaussianComponent(avg[:d], avg[d:])


def _same_as(q_t: MixtureApprox, h: GaussianComponent) -> bool:
    return bool(np.all(q_t.means == h.mean) and np.all(q_t.log_stds == h.log_std))


def _log_abs_diff(log_a, log_b):
    """``log |exp(log_a) - exp(log_b)|`` (``-inf`` where equal)."""
    hi = np.maximum(log_a, log_b)
    gap = -np.abs(log_a - log_b)
    with np.errstate(divide="ignore"):
        return hi + np.log(-np.expm1(gap))


def alpha_closed_form(target, q_t: MixtureApprox, h: GaussianComponent, n_samples: int,
                      rng: np.random.Generator, clip: float = 1e-3) -> float:
    """Chi-squared optimal mixing weight ``-A / B``, clipped to ``[clip, 1 - clip]``.

    ``A = int q_t (h - q_t) / L`` and ``B = int (h - q_t)^2 / L`` are importance
    sampled from ``rho = (q_t + h) / 2`` (half the draws from each).  The
    target normaliser cancels in the ratio.  ``A`` uses ``(h - q_t) / rho`` as a
    control variate, whose mean under ``rho`` is exactly zero.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if _same_as(q_t, h):
        raise EstimatorDegenerateError("new component coincides with the current mixture")
    n_q = n_samples // 2
    theta = np.vstack([mixture_sample(q_t, rng, n_q),
                       reparam_sample(h, rng.standard_normal((n_samples - n_q, h.dim)))])
    log_q = mixture_log_pdf(q_t, theta)
    log_h = component_log_pdf(h, theta)
    log_l = np.asarray(target.log_density(theta), dtype=float)
    log_rho = np.logaddexp(log_q, log_h) - np.log(2.0)
    sign = np.sign(log_h - log_q)
    log_abs = _log_abs_diff(log_h, log_q)
    log_d = log_abs - log_rho
    log_a = log_q - log_l + log_d
    log_b = log_abs + log_d - log_l
    with np.errstate(invalid="ignore"):
        shift = np.max(np.concatenate([log_a, log_b]))
    if not np.isfinite(shift):
        raise EstimatorDegenerateError("importance weights are degenerate (non-finite log-ratio)")
    d = sign * np.exp(log_d)
    a = sign * np.exp(log_a - shift)
    b = np.exp(log_b - shift)
    var_d = float(np.var(d))
    a_hat = float(np.mean(a))
    if var_d > 0:
        beta = float(np.mean((a - a_hat) * (d - np.mean(d)))) / var_d
        a_hat -= beta * float(np.mean(d))
    b_hat = float(np.mean(b))
    if not (np.isfinite(a_hat) and np.isfinite(b_hat)) or b_hat <= 0:
        raise EstimatorDegenerateError(f"chi-squared estimates unusable (A={a_hat}, B={b_hat})")
    return float(np.clip(-a_hat / b_hat, clip, 1.0 - clip))


def alpha_sgd(target, q_t: MixtureApprox, h: GaussianComponent, config: PursuitConfig,
              rng: np.random.Generator) -> float:
    """Projected SGD on ``KL((1 - alpha) q_t + alpha h || p)`` starting from 0.5.

    The gradient estimate is ``mean_h[log q_alpha - log L] - mean_{q_t}[log q_alpha - log L]``;
    the score term vanishes because ``h`` and ``q_t`` both integrate to one.
    """
    lo, hi = config.alpha_clip, 1.0 - config.alpha_clip
    m = config.mc_batch
    alpha = 0.5

    def excess(theta, a):
        log_mix = np.logaddexp(np.log1p(-a) + mixture_log_pdf(q_t, theta),
                               np.log(a) + component_log_pdf(h, theta))
        return log_mix - np.asarray(target.log_density(theta), dtype=float)

    for step in range(1, config.alpha_sgd_steps + 1):
        th = reparam_sample(h, rng.standard_normal((m, h.dim)))
        tq = mixture_sample(q_t, rng, m)
        g = float(np.mean(excess(th, alpha)) - np.mean(excess(tq, alpha)))
        if not np.isfinite(g):
            raise NonFiniteError(f"non-finite alpha gradient at step {step}", step=step)
        alpha = float(np.clip(alpha - config.alpha_learn_rate * g, lo, hi))
    return alpha


def choose_alpha(target, q_t, h, config: PursuitConfig, rng) -> tuple[float, str]:
    """Weight for ``h`` and the method that produced it.

    The closed form falls back to projected SGD when its estimator degenerates.
    """
    if config.alpha_method == "closed_form":
        try:
            return alpha_closed_form(target, q_t, h, config.alpha_samples, rng, config.alpha_clip), "closed_form"
        except EstimatorDegenerateError:
            pass
    return alpha_sgd(target, q_t, h, config, rng), "projected_sgd"


def _elbo(q, target, n, seed):
    return elbo_estimate(q, target, n, np.random.default_rng(seed))


def run_pursuit(target, config: PursuitConfig, rng: np.random.Generator | None = None) -> PursuitTrace:
    """Run the greedy loop for up to ``config.max_components`` components."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    trace = PursuitTrace()

    t0 = time.perf_counter()
    lam = config.lambda_at(0)
    q = MixtureApprox.single(fit_component(target, None, lam, config, rng))
    elbo_after, _ = _elbo(q, target, config.elbo_eval_samples, int(rng.integers(2**63)))
    trace.steps.append(StepRecord(0, lam, 1.0, float("nan"), elbo_after, True,
                                  1000.0 * (time.perf_counter() - t0)))

    for t in range(1, config.max_components):
        t0 = time.perf_counter()
        lam = config.lambda_at(t)
        h = fit_component(target, q, lam, config, rng)
        alpha, method = choose_alpha(target, q, h, config, rng)
        # both ELBOs on one seed so the comparison uses common random numbers
        seed = int(rng.integers(2**63))
        before, _ = _elbo(q, target, config.elbo_eval_samples, seed)
        candidate = mixture_extend(q, h, alpha)
        after, _ = _elbo(candidate, target, config.elbo_eval_samples, seed)
        if after - before <= config.stop_tol and method == "closed_form":
            # the chi-squared weight can overshoot when q_t has heavy tails relative to p
            alpha = alpha_sgd(target, q, h, config, rng)
            candidate = mixture_extend(q, h, alpha)
            after, _ = _elbo(candidate, target, config.elbo_eval_samples, seed)
        accepted = after - before > config.stop_tol
        trace.steps.append(StepRecord(t, lam, alpha, before, after, accepted,
                                      1000.0 * (time.perf_counter() - t0)))
        if not accepted:
            break
        q = candidate

    trace.mixture = q
    return trace

"""Monte Carlo estimators and brute-force grid oracles.

The grid tools work in one or two dimensions only; they are the reference
against which the stochastic machinery in :mod:`mepvi.pursuit` is tested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import NonFiniteError
from .variational import (
    GaussianComponent,
    MixtureApprox,
    component_log_pdf,
    mixture_log_pdf,
    mixture_sample,
    reparam_sample,
)

# points evaluated per call of the integrand in grid_quadrature
_GRID_CHUNK = 1_000_000


def elbo_estimate(q: MixtureApprox, target, n: int, rng: np.random.Generator):
    """Mean and standard error of ``log L(theta) - log q(theta)`` over ``theta ~ q``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    theta = mixture_sample(q, rng, n)
    vals = np.asarray(target.log_density(theta)) - mixture_log_pdf(q, theta)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NonFiniteError(f"non-finite ELBO integrand at theta={theta[i].tolist()}", theta=theta[i])
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / np.sqrt(n))


def _box_array(box):
    b = np.asarray(box, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] not in (1, 2):
        raise ValueError(f"box must be one or two (low, high) pairs, got {box!r}")
    if np.any(b[:, 1] <= b[:, 0]):
        raise ValueError("box bounds must satisfy low < high")
    return b


def grid_axes(box, resolution: int):
    """Midpoints per axis and the measure of one cell."""
    b = _box_array(box)
    widths = (b[:, 1] - b[:, 0]) / resolution
    axes = [lo + (np.arange(resolution) + 0.5) * w for (lo, _), w in zip(b, widths)]
    return axes, float(np.prod(widths))


def grid_points(box, resolution: int) -> np.ndarray:
    axes, _ = grid_axes(box, resolution)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def grid_evaluate(f, box, resolution: int) -> np.ndarray:
    """Evaluate a batched integrand on the midpoint grid, in row-major order."""
    axes, _ = grid_axes(box, resolution)
    if len(axes) == 1:
        return np.asarray(f(axes[0][:, None]), dtype=float)
    xs, ys = axes
    rows = max(1, _GRID_CHUNK // ys.size)
    out = np.empty(xs.size * ys.size)
    for start in range(0, xs.size, rows):
        block = xs[start:start + rows]
        pts = np.column_stack([np.repeat(block, ys.size), np.tile(ys, block.size)])
        out[start * ys.size:(start + block.size) * ys.size] = f(pts)
    return out


def grid_quadrature(f, box, resolution: int) -> float:
    """Midpoint-rule integral of a batched integrand ``f: (n, d) -> (n,)`` over a box."""
    if resolution < 101:
        raise ValueError("resolution must be >= 101")
    _, cell = grid_axes(box, resolution)
    return float(np.sum(grid_evaluate(f, box, resolution)) * cell)


def _xlogy_terms(log_a, log_b):
    """Pointwise ``a * (log a - log b)`` with the 0 log 0 = 0 convention."""
    a = np.exp(log_a)
    with np.errstate(invalid="ignore"):
        terms = a * (log_a - log_b)
    return np.where(a > 0, terms, 0.0)


def kl_vs_target(q: MixtureApprox, target, box=None, resolution: int | None = None) -> float:
    """``KL(q || p)`` by grid quadrature of ``q log(q / p)``, for targets with a known normaliser."""
    if target.log_normalizer is None:
        raise ValueError(f"target {target.name!r} has no known log normaliser")
    if q.dim > 2:
        raise ValueError("quadrature KL needs dim <= 2; use kl_monte_carlo")
    box = box if box is not None else target.support_box
    if box is None:
        raise ValueError("no quadrature box given and target has no support_box")
    if resolution is None:
        resolution = 20001 if q.dim == 1 else 1001

    def integrand(x):
        log_q = mixture_log_pdf(q, x)
        log_p = np.asarray(target.log_density(x)) - target.log_normalizer
        return _xlogy_terms(log_q, log_p)

    return grid_quadrature(integrand, box, resolution)


def kl_monte_carlo(q: MixtureApprox, target, n: int, rng: np.random.Generator):
    """``KL(q || p) = log Z - ELBO`` with the ELBO's standard error."""
    if target.log_normalizer is None:
        raise ValueError(f"target {target.name!r} has no known log normaliser")
    elbo, se = elbo_estimate(q, target, n, rng)
    return target.log_normalizer - elbo, se


@dataclass(frozen=True, eq=False)
class GridDensity:
    """A density tabulated on a midpoint grid, normalised so ``sum(values) * cell_measure == 1``."""

    box: tuple
    resolution: int
    values: np.ndarray
    cell_measure: float

    @classmethod
    def from_log_density(cls, log_f, box, resolution: int) -> GridDensity:
        _, cell = grid_axes(box, resolution)
        return cls._normalised(box, resolution, grid_evaluate(log_f, box, resolution), cell)

    @classmethod
    def uniform(cls, box, resolution: int) -> GridDensity:
        return cls.from_log_density(lambda x: np.zeros(x.shape[0]), box, resolution)

    @classmethod
    def _normalised(cls, box, resolution, log_values, cell):
        shift = np.max(log_values)
        if not np.isfinite(shift):
            raise ValueError("density is zero (or non-finite) on the whole grid")
        vals = np.exp(log_values - shift)
        vals = vals / (np.sum(vals) * cell)
        return cls(tuple(map(tuple, _box_array(box))), resolution, vals, cell)

    @property
    def log_values(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.values)


def temperature_map(p: GridDensity, lam: float) -> GridDensity:
    """``p^lam / integral(p^lam)`` on the same grid."""
    if not lam > 0:
        raise ValueError(f"temperature must be positive, got {lam!r}")
    return GridDensity._normalised(p.box, p.resolution, lam * p.log_values, p.cell_measure)


def kl_grid(a: GridDensity, b: GridDensity) -> float:
    """Grid-sum ``KL(a || b)``."""
    if a.values.shape != b.values.shape:
        raise ValueError("grids differ")
    return float(np.sum(_xlogy_terms(a.log_values, b.log_values)) * a.cell_measure)


def temperature_kl_report(p: GridDensity, lambdas):
    """Rows of ``(lam, KL(U || T_lam p), KL(U || p))`` with ``U`` uniform on the grid box.

    No ordering is asserted; the table is the output.
    """
    u = GridDensity.uniform(p.box, p.resolution)
    base = kl_grid(u, p)
    return [(float(lam), kl_grid(u, temperature_map(p, lam)), base) for lam in lambdas]


def cornercase_decomposition_check(h: GaussianComponent, target, q_t: MixtureApprox, n: int,
                                   rng: np.random.Generator):
    """Compare the lam = 1 MaxEnt objective with its two-term split on one batch.

    ``lhs`` is the objective (entropy estimated on the batch), ``rhs`` is
    ``mean[log L - log h] + mean[-log q_t]``.  Returns ``(lhs, rhs, |lhs - rhs|)``.
    """
    from .pursuit import maxent_objective

    noise = rng.standard_normal((n, h.dim))
    lhs = maxent_objective(h, target, q_t, 1.0, noise, entropy="sample")
    theta = reparam_sample(h, noise)
    log_h = np.atleast_1d(component_log_pdf(h, theta))
    term_vi = float(np.mean(np.asarray(target.log_density(theta)) - log_h))
    term_penalty = float(np.mean(-np.atleast_1d(mixture_log_pdf(q_t, theta))))
    rhs = term_vi + term_penalty
    return lhs, rhs, abs(lhs - rhs)


def taylor_gap(target, q_t: MixtureApprox, h: GaussianComponent, alphas, box, resolution: int):
    """Exact ELBO change from mixing in ``h`` versus its local quadratic model.

    For each ``alpha`` returns ``(alpha, delta, model, |delta - model| / alpha)`` where
    ``delta = F[(1 - alpha) q_t + alpha h] - F[q_t]`` and
    ``model = alpha <h - q_t, log(L / q_t)> - alpha^2 integral (h - q_t)^2 / q_t``,
    all integrals by grid quadrature.  ``q_t`` and ``h`` are renormalised on
    the grid so that ``h - q_t`` integrates to exactly zero there.
    """
    pts = grid_points(box, resolution)
    _, cell = grid_axes(box, resolution)
    log_l = np.asarray(target.log_density(pts))
    log_q = mixture_log_pdf(q_t, pts)
    log_h = component_log_pdf(h, pts)
    log_q -= logsumexp(log_q) + np.log(cell)
    log_h -= logsumexp(log_h) + np.log(cell)
    qv, hv = np.exp(log_q), np.exp(log_h)
    if np.any(qv == 0):
        raise ValueError("q_t underflows on the box; shrink the box or widen q_t")
    # F[q] = integral q log(L / q)
    f_q = -np.sum(_xlogy_terms(log_q, log_l)) * cell
    linear = np.sum((hv - qv) * (log_l - log_q)) * cell
    quadratic = np.sum((hv - qv) ** 2 / qv) * cell
    rows = []
    for a in alphas:
        a = float(a)
        log_mix = np.logaddexp(np.log1p(-a) + log_q, np.log(a) + log_h)
        f_mix = -np.sum(_xlogy_terms(log_mix, log_l)) * cell
        delta = f_mix - f_q
        model = a * linear - a * a * quadratic
        rows.append((a, float(delta), float(model), float(abs(delta - model) / a)))
    return rows

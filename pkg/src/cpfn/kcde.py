"""Kernel conditional density estimation and an acceptance-rejection sampler.

The estimate is the ratio of product-kernel joint and marginal estimates,

    f(y | x) = sum_i K_h(x - x_i) K_b(y - y_i) / sum_i K_h(x - x_i),

i.e. a Nadaraya-Watson average of response kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import AcceptanceStall, DimensionMismatch, EmptyNeighborhood, InvalidConfig
from .kernels import KernelSpec
from .training import _column_stats

CV_MULTIPLIERS = tuple(2.0 ** (k / 2.0) for k in range(-4, 5))   # 0.25 .. 4, contains 1
_BLOCK_ELEMENTS = 4_000_000
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
# normalized covariate weights below this are dropped (total effect < n * 1e-15)
_WEIGHT_FLOOR = 1e-15


def _kernel_1d(family, t):
    if family == "gaussian":
        return np.exp(-0.5 * t * t) * _INV_SQRT_2PI
    return np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t), 0.0)


def _log_kernel_sum(family, T):
    """log prod_j kappa(T_j) summed over the last axis (may be -inf)."""
    if family == "gaussian":
        return -0.5 * np.sum(T * T, axis=-1) - T.shape[-1] * 0.5 * math.log(2.0 * math.pi)
    with np.errstate(divide="ignore"):
        return np.sum(np.log(_kernel_1d(family, T)), axis=-1)


def product_kernel_matrix(family, queries, points, h):
    """K[a, i] = prod_j kappa((queries[a,j] - points[i,j]) / h_j) / h_j."""
    queries, points = np.atleast_2d(queries), np.atleast_2d(points)
    h = np.asarray(h, dtype=np.float64)
    out = np.empty((queries.shape[0], points.shape[0]))
    step = max(1, _BLOCK_ELEMENTS // max(1, points.size))
    log_norm = np.sum(np.log(h))
    for a in range(0, queries.shape[0], step):
        T = (queries[a:a + step, None, :] - points[None]) / h
        out[a:a + step] = np.exp(_log_kernel_sum(family, T) - log_norm)
    return out


@dataclass(frozen=True)
class KCDEModel:
    X: np.ndarray
    Y: np.ndarray
    x_bandwidths: np.ndarray
    y_bandwidths: np.ndarray
    kernel: KernelSpec
    rule: str = "silverman"

    def __post_init__(self):
        if self.X.shape[0] < 2:
            raise InvalidConfig("kernel conditional density estimation needs n >= 2")
        if np.any(~(self.x_bandwidths > 0)) or np.any(~(self.y_bandwidths > 0)):
            raise InvalidConfig("bandwidths must be positive")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.Y.shape[1]

    def support_box(self):
        """Data range padded by three sample standard deviations per coordinate."""
        sd = self.Y.std(axis=0, ddof=1)
        return self.Y.min(axis=0) - 3.0 * sd, self.Y.max(axis=0) + 3.0 * sd

    def with_multiplier(self, c):
        return KCDEModel(self.X, self.Y, self.x_bandwidths * c, self.y_bandwidths * c, self.kernel,
                         self.rule)


def silverman_bandwidths(A, dim):
    n = A.shape[0]
    sd = _column_stats(A, "data").std
    return sd * (4.0 / ((dim + 2.0) * n)) ** (1.0 / (dim + 4.0))


def loo_log_likelihood(model: KCDEModel, guard=1e-300) -> float:
    """sum_i log f_{-i}(y_i | x_i), each point left out of its own estimate."""
    fam = model.kernel.family
    total = 0.0
    step = max(1, _BLOCK_ELEMENTS // max(1, model.n * (model.d + model.q)))
    for a in range(0, model.n, step):
        b = min(model.n, a + step)
        Kx = product_kernel_matrix(fam, model.X[a:b], model.X, model.x_bandwidths)
        Ky = product_kernel_matrix(fam, model.Y[a:b], model.Y, model.y_bandwidths)
        idx = np.arange(a, b)
        Kx[idx - a, idx] = 0.0
        num = np.sum(Kx * Ky, axis=1)
        den = np.sum(Kx, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            f = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        total += float(np.sum(np.log(f + guard)))
    return total


def kcde_fit(data: Dataset, bandwidth_rule="silverman", kernel_family="gaussian",
             multipliers=CV_MULTIPLIERS) -> KCDEModel:
    """Fit bandwidths by the normal-reference rule or by leave-one-out search.

    The reference rule treats all d+q columns as one joint sample; the
    ``cv`` rule rescales those values by the multiplier with the best
    leave-one-out conditional log-likelihood.
    """
    if bandwidth_rule not in ("silverman", "cv"):
        raise InvalidConfig(f"unknown bandwidth rule {bandwidth_rule!r}")
    if data.n < 2:
        raise InvalidConfig("kernel conditional density estimation needs n >= 2")
    dim = data.d + data.q
    model = KCDEModel(data.X.copy(), data.Y.copy(), silverman_bandwidths(data.X, dim),
                      silverman_bandwidths(data.Y, dim), KernelSpec(kernel_family, data.q),
                      bandwidth_rule)
    if bandwidth_rule == "silverman":
        return model
    scores = [loo_log_likelihood(model.with_multiplier(c)) for c in multipliers]
    return model.with_multiplier(multipliers[int(np.argmax(scores))])


def neighbor_weights(model: KCDEModel, x) -> np.ndarray:
    """Normalized covariate weights K_h(x - x_i) / sum_i K_h(x - x_i)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != model.d:
        raise DimensionMismatch(f"expected {model.d} covariates, got {x.shape[1]}")
    T = (x - model.X) / model.x_bandwidths
    logk = _log_kernel_sum(model.kernel.family, T) - np.sum(np.log(model.x_bandwidths))
    if not np.any(np.exp(logk) > 0):
        raise EmptyNeighborhood("no training covariate has positive kernel weight at this query")
    w = np.exp(logk - logk.max())
    return w / w.sum()


def kcde_density(model: KCDEModel, x, y) -> np.ndarray:
    """Conditional density at one covariate ``x`` for one or many responses ``y``."""
    y = np.asarray(y, dtype=np.float64)
    Y = y.reshape(-1, model.q)
    w = neighbor_weights(model, x)
    keep = w > _WEIGHT_FLOOR
    K = product_kernel_matrix(model.kernel.family, Y, model.Y[keep], model.y_bandwidths)
    dens = K @ w[keep]
    return dens[0] if (y.ndim == 0 or y.shape == (model.q,)) else dens


def _grid_axes(model, per_axis):
    lo, hi = model.support_box()
    return [np.linspace(lo[j], hi[j], per_axis) for j in range(model.q)]


def density_on_grid(model: KCDEModel, x, per_axis=200) -> np.ndarray:
    """Conditional density on the tensor grid over the support box (q <= 2).

    The product kernel separates across response coordinates, so the 2-d
    grid is one weighted matrix product.
    """
    if model.q > 2:
        raise InvalidConfig("grid evaluation supports at most two response dimensions")
    w = neighbor_weights(model, x)
    keep = w > _WEIGHT_FLOOR
    axes = _grid_axes(model, per_axis)
    A = [_kernel_1d(model.kernel.family, (g[:, None] - model.Y[keep, j][None]) / model.y_bandwidths[j])
         / model.y_bandwidths[j] for j, g in enumerate(axes)]
    if model.q == 1:
        return A[0] @ w[keep]
    return (A[0] * w[keep]) @ A[1].T


def query_grid(xs, size=50):
    """Up to ``size`` covariate rows spanning the query set."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[0] <= size:
        return xs
    if xs.shape[1] == 1:
        return np.linspace(xs.min(), xs.max(), size)[:, None]
    order = np.argsort(xs[:, 0], kind="stable")
    return xs[order[np.linspace(0, xs.shape[0] - 1, size).round().astype(int)]]


def kcde_fmax(model: KCDEModel, xs, per_axis=200, n_x=50) -> float:
    """Largest conditional density over the response grid and a covariate grid."""
    return float(max(density_on_grid(model, x, per_axis).max() for x in query_grid(xs, n_x)))


def accept_reject(target, lower, upper, f_max, m, rng, safety=1.1, max_rejections=1_000_000,
                  batch=4096, stats=None):
    """m draws from ``target`` using a uniform proposal on the box [lower, upper].

    With g the uniform density, a candidate y is kept when U < f(y) / (M g(y))
    for M = safety * f_max / g, i.e. U < f(y) / (safety * f_max).  Raises
    AcceptanceStall after ``max_rejections`` consecutive rejections.  If a
    dict is passed as ``stats`` it receives the number of candidates examined
    up to the last acceptance.
    """
    lower, upper = np.atleast_1d(lower).astype(np.float64), np.atleast_1d(upper).astype(np.float64)
    if not f_max > 0:
        raise InvalidConfig("f_max must be positive")
    bound = safety * f_max
    accepted = []
    have, streak, examined = 0, 0, 0
    while have < m:
        cand = lower + (upper - lower) * rng.random((batch, lower.size))
        u = rng.random(batch)
        hits = np.flatnonzero(u * bound < np.asarray(target(cand)))
        first = hits[0] if hits.size else batch
        if streak + first > max_rejections:
            raise AcceptanceStall(f"more than {max_rejections} consecutive rejections; "
                                  "the density bound is likely too small")
        if hits.size:
            hits = hits[: m - have]
            accepted.append(cand[hits])
            have += hits.size
            streak = batch - 1 - hits[-1]
            examined += hits[-1] + 1 if have == m else batch
        else:
            streak += batch
            examined += batch
    if stats is not None:
        stats.update(proposed=int(examined), accepted=int(have))
    return np.concatenate(accepted)[:m]


def kcde_sample_ar(model: KCDEModel, x, m, rng, f_max=None, per_axis=200, n_x=50) -> np.ndarray:
    """m conditional draws at ``x`` by acceptance-rejection from the support box.

    ``f_max`` defaults to the grid maximum at ``x``; pass a value computed
    over a whole query set with :func:`kcde_fmax` to share one bound.
    """
    if m < 1:
        raise InvalidConfig("sample count must be >= 1")
    if f_max is None:
        f_max = kcde_fmax(model, np.atleast_2d(x), per_axis, n_x)
    w = neighbor_weights(model, x)
    keep = w > _WEIGHT_FLOOR
    Yk, wk = model.Y[keep], w[keep]
    fam, b = model.kernel.family, model.y_bandwidths

    def target(cand):
        return product_kernel_matrix(fam, cand, Yk, b) @ wk

    lo, hi = model.support_box()
    return accept_reject(target, lo, hi, f_max, m, rng)

"""Sampling, densities and conditional summaries from a trained CPFN.

Inputs and outputs are in the raw data scale; standardization and the
optional ``log1p`` response transform are handled here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import forward_transform, inverse_transform, log_abs_jacobian
from .errors import DimensionMismatch, InvalidConfig, InvalidTau
from .kernels import scaled_kernel_eval
from .model import CPFNModel, draw_latent, push_forward_shared

DEFAULT_TAUS = (0.1, 0.25, 0.5, 0.75, 0.9)
DENSITY_SEED = 20240531


def _as_covariates(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if X.shape[-1] != model.d:
        raise DimensionMismatch(f"model expects {model.d} covariates, got {X.shape[-1]}")
    return X, single


def sample_standardized(model: CPFNModel, x_std, m: int, rng) -> np.ndarray:
    """(k, m, q) draws of phi(x, U) in standardized response units."""
    us = draw_latent(model.latent, rng, (m, model.q))
    return push_forward_shared(model, np.atleast_2d(x_std), us)


def sample_conditional(model: CPFNModel, x, m: int, rng) -> np.ndarray:
    """m draws from the estimated law of Y | X=x, raw scale.

    ``x`` may be a single covariate vector, giving an (m, q) array, or a
    (k, d) batch, giving (k, m, q) with independent latent draws per row.
    """
    if m < 1:
        raise InvalidConfig("sample count must be >= 1")
    X, single = _as_covariates(model, x)
    xs = model.x_stats.apply(X)
    if single:
        z = sample_standardized(model, xs, m, rng)
    else:
        us = draw_latent(model.latent, rng, (X.shape[0], m, model.q))
        from .model import push_forward
        z = push_forward(model, xs, us)
    y = inverse_transform(model.y_transform, model.y_stats.invert(z))
    return y[0] if single else y


def conditional_density(model: CPFNModel, x, y, R_density: int = 1000, rng=None) -> np.ndarray:
    """Monte Carlo estimate of the smoothed density f(y | x) in raw scale.

    ``x`` is one covariate vector (all ``y`` rows are evaluated at it) or a
    batch of covariates paired row-wise with ``y``.  Without ``rng`` a fixed
    seed is used, so repeated calls agree exactly.
    """
    if R_density < 1:
        raise InvalidConfig("R_density must be >= 1")
    rng = np.random.default_rng(DENSITY_SEED) if rng is None else rng
    X, _ = _as_covariates(model, x)
    y = np.asarray(y, dtype=np.float64)
    scalar_y = y.ndim == 0 or (y.ndim == 1 and model.q > 1)
    Y = y.reshape(-1, model.q)
    if X.shape[0] not in (1, Y.shape[0]):
        raise DimensionMismatch("x and y batches have different lengths")
    us = draw_latent(model.latent, rng, (R_density, model.q))
    xs = model.x_stats.apply(X)
    ys = model.y_stats.apply(forward_transform(model.y_transform, Y))
    bw = model.bandwidth_spec
    out = np.empty(Y.shape[0])
    block = max(1, 4_000_000 // (R_density * model.q * max(1, model.rank)))
    if X.shape[0] == 1:
        centers = push_forward_shared(model, xs, us)[0]            # (R, q)
        for a in range(0, Y.shape[0], block):
            diff = ys[a:a + block, None, :] - centers[None]
            out[a:a + block] = scaled_kernel_eval(model.kernel, bw, diff).mean(axis=1)
    else:
        for a in range(0, Y.shape[0], block):
            centers = push_forward_shared(model, xs[a:a + block], us)  # (b, R, q)
            diff = ys[a:a + block, None, :] - centers
            out[a:a + block] = scaled_kernel_eval(model.kernel, bw, diff).mean(axis=1)
    log_jac = -np.sum(np.log(model.y_stats.std)) + log_abs_jacobian(model.y_transform, Y)
    dens = out * np.exp(log_jac)
    return dens[0] if scalar_y or (y.ndim == 1 and model.q == 1 and y.size == 1) else dens


def conditional_quantile(samples, tau) -> np.ndarray:
    """Empirical quantile with linear interpolation between order statistics."""
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(~((tau_arr > 0) & (tau_arr < 1))):
        raise InvalidTau("tau must lie strictly between 0 and 1")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise InvalidConfig("need at least one sample")
    return np.quantile(samples, tau_arr, axis=0, method="linear")


@dataclass
class ConditionalStatistics:
    mean: np.ndarray
    covariance: np.ndarray
    taus: tuple
    quantiles: np.ndarray       # (len(taus), q)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "covariance": self.covariance.tolist(),
                "quantiles": {str(t): self.quantiles[i].tolist() for i, t in enumerate(self.taus)}}


def conditional_statistics(model: CPFNModel, x, m: int, rng, taus=DEFAULT_TAUS) -> ConditionalStatistics:
    if m < 2:
        raise InvalidConfig("need at least two samples")
    s = sample_conditional(model, x, m, rng)
    return summarize_samples(s, taus)


def summarize_samples(s, taus=DEFAULT_TAUS) -> ConditionalStatistics:
    s = np.asarray(s, dtype=np.float64)
    mean = s.mean(axis=0)
    cov = np.atleast_2d(np.cov(s, rowvar=False, ddof=1))
    return ConditionalStatistics(mean, cov, tuple(taus), conditional_quantile(s, list(taus)))

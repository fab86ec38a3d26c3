"""Synthetic data processes with exact conditional oracles.

``UnivariateProcess``: X ~ U(0,1) and, with B ~ Bernoulli(1/2), W ~ N(0,1),

    Y = 10x(x-0.5)(1.5-x) + 0.3 W (1.3-x)   if x < 0.5 or B = 0
    Y = 10x(x-0.5)(0.8-x) + 0.3 W (1.3-x)   otherwise.

``RingBlobsProcess``: X ~ N(0, I_5); Y | X=x is a mixture of a ring
(weight sigmoid(beta'x)) and two Gaussian blobs.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import expit, ndtr

from .data import Dataset
from .errors import InvalidTau, SingularOrigin

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _normal_pdf(z):
    return np.exp(-0.5 * z * z) * _INV_SQRT_2PI


class UnivariateProcess:
    name = "univariate"
    d = 1
    q = 1

    @staticmethod
    def mean_unimodal(x):
        x = np.asarray(x, dtype=np.float64)
        return 10.0 * x * (x - 0.5) * (1.5 - x)

    @staticmethod
    def mean_bimodal(x):
        x = np.asarray(x, dtype=np.float64)
        return 10.0 * x * (x - 0.5) * (0.8 - x)

    @staticmethod
    def noise_scale(x):
        return 0.3 * (1.3 - np.asarray(x, dtype=np.float64))

    def params(self):
        return {}

    def covariates(self, n, rng):
        return rng.random((n, 1))

    def responses(self, x, rng):
        """One Y draw per covariate value (x is a flat array)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        b = rng.random(x.shape) < 0.5
        w = rng.standard_normal(x.shape)
        second = (x >= 0.5) & b
        m = np.where(second, self.mean_bimodal(x), self.mean_unimodal(x))
        return m + w * self.noise_scale(x)

    def generate(self, n, rng) -> Dataset:
        x = self.covariates(n, rng)
        y = self.responses(x[:, 0], rng)
        return Dataset(x, y[:, None], ["x"], ["y"], meta={"process": self.name})

    def sample_conditional(self, x, m, rng):
        x = float(np.asarray(x).reshape(-1)[0])
        return self.responses(np.full(m, x), rng)[:, None]

    def density(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        s = self.noise_scale(x)
        f1 = _normal_pdf((y - self.mean_unimodal(x)) / s) / s
        f2 = _normal_pdf((y - self.mean_bimodal(x)) / s) / s
        return np.where(x < 0.5, f1, 0.5 * f1 + 0.5 * f2)

    def cdf(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        s = self.noise_scale(x)
        F1 = ndtr((y - self.mean_unimodal(x)) / s)
        F2 = ndtr((y - self.mean_bimodal(x)) / s)
        return np.where(x < 0.5, F1, 0.5 * F1 + 0.5 * F2)

    def quantile(self, x, tau, tol=1e-10):
        """Conditional quantile by vectorized bisection on the CDF.

        ``x`` and ``tau`` broadcast against each other.
        """
        tau = np.asarray(tau, dtype=np.float64)
        if np.any((tau <= 0) | (tau >= 1)):
            raise InvalidTau("tau must lie strictly between 0 and 1")
        x, tau = np.broadcast_arrays(np.asarray(x, dtype=np.float64), tau)
        s = self.noise_scale(x)
        m1, m2 = self.mean_unimodal(x), self.mean_bimodal(x)
        lo = np.minimum(m1, m2) - 10.0 * s
        hi = np.maximum(m1, m2) + 10.0 * s
        # bisection halves the bracket; stop once |F(mid) - tau| is small everywhere
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            F = self.cdf(x, mid)
            below = F < tau
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(np.abs(F - tau) < tol) or np.all(hi - lo < 1e-15 * (1 + np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    def quantile_grid(self, xs, taus):
        """Quantile table of shape (len(xs), len(taus))."""
        xs = np.asarray(xs, dtype=np.float64).reshape(-1)
        return self.quantile(xs[:, None], np.asarray(taus, dtype=np.float64)[None, :])


def gen_univariate(n, rng) -> Dataset:
    return UnivariateProcess().generate(n, rng)


def true_univariate_density(x, y):
    return UnivariateProcess().density(x, y)


def true_univariate_quantile(x, tau):
    return UnivariateProcess().quantile(x, tau)


class RingBlobsProcess:
    """Ring-plus-two-blobs conditional law on R^2 driven by a 5-d covariate.

    The blob means and covariance are not pinned down by the ring
    parameters; they are fixed here as

        m1(x) = [1 + 1.5 tanh(0.5 g), 1],  m2(x) = [-1, -1 - 1.5 tanh(0.5 g)]
        Sigma(x) = (0.2 + 0.1 sigmoid(g))^2 I,   with g = gamma'x.
    """

    name = "multivariate"
    d = 5
    q = 2

    def __init__(self):
        self.beta = np.array([1.2, -0.8, 0.6, -0.4, 0.9])
        self.gamma = np.array([-0.5, 1.1, -0.3, 0.7, 0.4])
        self.r0, self.r1 = 2.0, 1.5
        self.sigma0, self.sigma1 = 0.18, 0.15

    def params(self):
        return {"beta": self.beta.tolist(), "gamma": self.gamma.tolist(), "r0": self.r0,
                "r1": self.r1, "sigma0": self.sigma0, "sigma1": self.sigma1,
                "blobs": "m1=[1+1.5tanh(0.5g),1], m2=[-1,-1-1.5tanh(0.5g)], sd=0.2+0.1s(g)"}

    # latent parameters ------------------------------------------------------
    def ring_weight(self, x):
        return expit(np.asarray(x, dtype=np.float64) @ self.beta)

    def ring_radius(self, x):
        return self.r0 + self.r1 * np.tanh(0.7 * (np.asarray(x, dtype=np.float64) @ self.beta))

    def ring_scale(self, x):
        return self.sigma0 + self.sigma1 * expit(1.2 * (np.asarray(x, dtype=np.float64) @ self.gamma))

    def blob_means(self, x):
        g = np.asarray(x, dtype=np.float64) @ self.gamma
        t = 1.5 * np.tanh(0.5 * g)
        m1 = np.stack([1.0 + t, np.ones_like(g)], axis=-1)
        m2 = np.stack([-np.ones_like(g), -1.0 - t], axis=-1)
        return m1, m2

    def blob_scale(self, x):
        g = np.asarray(x, dtype=np.float64) @ self.gamma
        return 0.2 + 0.1 * expit(g)

    # sampling ---------------------------------------------------------------
    def covariates(self, n, rng):
        return rng.standard_normal((n, self.d))

    def responses(self, X, rng):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        z = rng.random(n) < self.ring_weight(X)
        rr, rs = self.ring_radius(X), self.ring_scale(X)
        radius = rr + rs * rng.standard_normal(n)
        neg = np.flatnonzero(z & (radius < 0))
        while neg.size:  # truncation to [0, inf) by rejection
            radius[neg] = rr[neg] + rs[neg] * rng.standard_normal(neg.size)
            neg = neg[radius[neg] < 0]
        theta = rng.uniform(0.0, 2.0 * math.pi, n)
        ring = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=-1)
        m1, m2 = self.blob_means(X)
        pick = rng.random(n) < 0.5
        centre = np.where(pick[:, None], m1, m2)
        blobs = centre + self.blob_scale(X)[:, None] * rng.standard_normal((n, 2))
        return np.where(z[:, None], ring, blobs)

    def generate(self, n, rng) -> Dataset:
        X = self.covariates(n, rng)
        Y = self.responses(X, rng)
        return Dataset(X, Y, [f"x{j + 1}" for j in range(self.d)], ["y1", "y2"],
                       meta={"process": self.name})

    def sample_conditional(self, x, m, rng):
        x = np.asarray(x, dtype=np.float64).reshape(1, self.d)
        return self.responses(np.repeat(x, m, axis=0), rng)

    # density ----------------------------------------------------------------
    def ring_density(self, x, y):
        y = np.asarray(y, dtype=np.float64)
        rho = np.linalg.norm(y, axis=-1)
        if np.any(rho == 0):
            raise SingularOrigin("ring density is undefined at y = 0")
        mu, s = self.ring_radius(x), self.ring_scale(x)
        # truncated-normal density of the radius, normalized on [0, inf)
        g = _normal_pdf((rho - mu) / s) / s / ndtr(mu / s)
        return g / (2.0 * math.pi * rho)

    def blob_density(self, x, y):
        y = np.asarray(y, dtype=np.float64)
        m1, m2 = self.blob_means(x)
        sd = self.blob_scale(x)
        norm = 1.0 / (2.0 * math.pi * sd * sd)
        e1 = np.exp(-0.5 * np.sum((y - m1) ** 2, axis=-1) / sd ** 2)
        e2 = np.exp(-0.5 * np.sum((y - m2) ** 2, axis=-1) / sd ** 2)
        return 0.5 * norm * (e1 + e2)

    def density(self, x, y):
        w = self.ring_weight(x)
        return w * self.ring_density(x, y) + (1.0 - w) * self.blob_density(x, y)


X_RING = np.array([2.0, 1.0, 0.5, -0.3, -1.0])
X_TRANS = np.zeros(5)
X_BLOBS = np.array([-2.0, -1.0, -0.5, 0.3, 1.0])


def gen_multivariate(n, rng) -> Dataset:
    return RingBlobsProcess().generate(n, rng)


def true_multivariate_density(x, y):
    return RingBlobsProcess().density(x, y)


PROCESSES = {"univariate": UnivariateProcess, "multivariate": RingBlobsProcess}


def get_process(name):
    try:
        return PROCESSES[name]()
    except KeyError:
        from .errors import InvalidConfig
        raise InvalidConfig(f"unknown process {name!r}; expected one of {sorted(PROCESSES)}") from None


def sample_true_conditional(process, x, m, rng):
    if isinstance(process, str):
        process = get_process(process)
    return process.sample_conditional(x, m, rng)

"""Wasserstein-based accuracy measures, quantile errors and held-out NLL."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .errors import BudgetExceeded, InvalidConfig, InvalidTau, NonFiniteValue, SizeMismatch

ASSIGNMENT_BUDGET = 512
NLL_GUARD = 1e-300
REPORT_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# 1-Wasserstein between equal-size clouds
# ---------------------------------------------------------------------------


def w1_sorted_1d(a, b) -> float:
    """(1/m) sum_i |a_(i) - b_(i)| over order statistics."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise SizeMismatch(f"clouds have {a.size} and {b.size} points")
    if a.size == 0:
        raise SizeMismatch("clouds must be nonempty")
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


@dataclass
class TransportPlan:
    """Optimal matching a[i] -> b[perm[i]] and its mean ground cost."""

    perm: np.ndarray
    cost: float


def solve_assignment(C) -> np.ndarray:
    """Minimum-cost perfect matching of a square cost matrix.

    Shortest augmenting paths with row/column potentials (Hungarian method in
    the Jonker-Volgenant form); O(m^3).  Returns ``perm`` with row i matched
    to column perm[i].
    """
    C = np.asarray(C, dtype=np.float64)
    m = C.shape[0]
    if C.shape != (m, m):
        raise SizeMismatch("cost matrix must be square")
    # 1-based bookkeeping: column 0 is a virtual start node
    u = np.zeros(m + 1)
    v = np.zeros(m + 1)
    match = np.zeros(m + 1, dtype=np.int64)     # match[j] = row assigned to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, m + 1):
        match[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    perm = np.empty(m, dtype=np.int64)
    perm[match[1:] - 1] = np.arange(m)
    return perm


def w1_assignment(a, b, budget: int = ASSIGNMENT_BUDGET) -> TransportPlan:
    """Exact empirical W1 between equal-size point clouds (Euclidean cost)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.shape != b.shape:
        raise SizeMismatch(f"clouds have shapes {a.shape} and {b.shape}")
    m = a.shape[0]
    if m == 0:
        raise SizeMismatch("clouds must be nonempty")
    if m > budget:
        raise BudgetExceeded(f"{m} points exceed the assignment budget of {budget}")
    C = np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1))
    perm = solve_assignment(C)
    return TransportPlan(perm, float(C[np.arange(m), perm].mean()))


# ---------------------------------------------------------------------------
# Averaged distances
# ---------------------------------------------------------------------------


def _simpson_grid(R, name):
    if R < 2 or R % 2:
        raise InvalidConfig(f"{name} must be a positive even number")
    return np.arange(R + 1) / R


def tau_grid(R_tau: int):
    """Simpson nodes j/R_tau and the levels actually evaluated (ends clipped)."""
    nodes = _simpson_grid(R_tau, "R_tau")
    return nodes, np.clip(nodes, 1.0 / R_tau, 1.0 - 1.0 / R_tau)


def awd_univariate(true_quantile, est_quantile, R_X: int = 1000, R_tau: int = 100) -> float:
    """Average W1 over X ~ U(0,1) through the quantile-gap integral.

    Both sources are callables ``f(x_grid, taus) -> (len(x_grid), len(taus))``.
    The double integral of |q(tau|x) - q_hat(tau|x)| is taken with composite
    Simpson on x_i = i/R_X and tau_j = j/R_tau.
    """
    xs = _simpson_grid(R_X, "R_X")
    nodes, taus = tau_grid(R_tau)
    gap = np.abs(np.asarray(true_quantile(xs, taus)) - np.asarray(est_quantile(xs, taus)))
    return float(simpson(simpson(gap, x=nodes, axis=1), x=xs))


def aqe(true_quantile, est_quantile, tau: float, R_X: int = 1000) -> float:
    """Average over X ~ U(0,1) of the absolute tau-quantile error."""
    if not 0.0 < tau < 1.0:
        raise InvalidTau("tau must lie strictly between 0 and 1")
    xs = _simpson_grid(R_X, "R_X")
    t = np.array([tau])
    gap = np.abs(np.asarray(true_quantile(xs, t)) - np.asarray(est_quantile(xs, t)))[:, 0]
    return float(simpson(gap, x=xs))


def empirical_quantile_source(sampler, R_Y: int, rng):
    """Quantile callable built from ``sampler(x_block, m, rng) -> (k, m, 1)``.

    The samples for a grid are drawn once and cached, so repeated calls on
    the same grid (several tau levels) reuse them.
    """
    cache = {}

    def source(xs, taus):
        key = np.asarray(xs).tobytes()
        if key not in cache:
            cache[key] = np.sort(np.asarray(sampler(np.asarray(xs)[:, None], R_Y, rng))[..., 0], axis=1)
        return np.quantile(cache[key], np.asarray(taus), axis=1, method="linear").T

    return source


@dataclass
class MultivariateAWD:
    awd: float
    per_x: np.ndarray
    noise_floor: float
    per_x_floor: np.ndarray
    xs: np.ndarray

    def to_dict(self):
        return {"awd": self.awd, "noise_floor": self.noise_floor, "per_x": self.per_x.tolist(),
                "per_x_floor": self.per_x_floor.tolist()}


def awd_multivariate(true_sampler, est_sampler, covariate_sampler, R_X: int = 30, R_Y: int = 200,
                     rng=None, shared_streams: bool = False, noise_floor: bool = True,
                     budget: int = ASSIGNMENT_BUDGET) -> MultivariateAWD:
    """Mean exact W1 between true and estimated conditional clouds.

    Samplers are ``f(x, m, rng) -> (m, q)``; ``covariate_sampler(n, rng)``
    draws the evaluation covariates.  Each covariate gets its own child
    streams; ``shared_streams`` hands the same stream to both samplers.  The
    noise floor is the same statistic between two independent true clouds.
    """
    if R_X < 1 or R_Y < 1:
        raise InvalidConfig("R_X and R_Y must be >= 1")
    if R_Y > budget:
        raise BudgetExceeded(f"R_Y={R_Y} exceeds the assignment budget of {budget}")
    rng = np.random.default_rng(0) if rng is None else rng
    xs = np.atleast_2d(covariate_sampler(R_X, rng))
    seeds = rng.integers(0, 2 ** 63 - 1, size=R_X)
    per_x = np.empty(R_X)
    floor = np.full(R_X, np.nan)
    for i, x in enumerate(xs):
        r_true = np.random.default_rng([int(seeds[i]), 0])
        r_est = np.random.default_rng([int(seeds[i]), 0 if shared_streams else 1])
        a = true_sampler(x, R_Y, r_true)
        b = est_sampler(x, R_Y, r_est)
        per_x[i] = w1_assignment(a, b, budget).cost
        if noise_floor:
            c = true_sampler(x, R_Y, np.random.default_rng([int(seeds[i]), 2]))
            floor[i] = w1_assignment(a, c, budget).cost
    return MultivariateAWD(float(per_x.mean()), per_x,
                           float(floor.mean()) if noise_floor else float("nan"), floor, xs)


def nll(density, X, Y, guard: float = NLL_GUARD) -> float:
    """-(1/N) sum log(guard + f(y_i | x_i)) for a paired density callable."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] == 0:
        raise InvalidConfig("test set is empty")
    f = np.asarray(density(X, Y), dtype=np.float64).reshape(-1)
    if f.shape[0] != X.shape[0]:
        raise SizeMismatch("density returned the wrong number of values")
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise NonFiniteValue("density values must be finite and nonnegative")
    return float(-np.mean(np.log(guard + f)))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _finite(v):
    if isinstance(v, dict):
        return all(_finite(x) for x in v.values())
    if isinstance(v, (list, tuple)):
        return all(_finite(x) for x in v)
    if isinstance(v, float):
        return math.isfinite(v)
    return True


@dataclass
class EvalReport:
    metrics: dict
    config_hash: str
    seed: int
    sample_sizes: dict = field(default_factory=dict)
    per_x: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def validate(self):
        if not _finite(self.metrics):
            raise NonFiniteValue("report contains non-finite metric values")
        if not self.config_hash:
            raise InvalidConfig("report needs a config hash")

    def to_dict(self):
        return {"schema_version": REPORT_SCHEMA_VERSION, "config_hash": self.config_hash,
                "seed": self.seed, "sample_sizes": self.sample_sizes, "metrics": self.metrics,
                "per_x": self.per_x, **({"extra": self.extra} if self.extra else {})}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        """Flat ``metric,value`` rows; nested tables are joined with '/'."""
        rows = []

        def walk(prefix, v):
            if isinstance(v, dict):
                for k in sorted(v):
                    walk(f"{prefix}/{k}" if prefix else str(k), v[k])
            else:
                rows.append((prefix, v))

        walk("", self.metrics)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            w.writerow(["config_hash", self.config_hash])
            w.writerow(["seed", self.seed])
            for name, value in rows:
                w.writerow([name, repr(value) if isinstance(value, float) else value])


def write_quantile_table(path, xs, taus, true_q, est_q):
    """Long-format rows (x, tau, true_q, est_q) for plotting."""
    true_q, est_q = np.asarray(true_q), np.asarray(est_q)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "tau", "true_q", "est_q"])
        for i, x in enumerate(xs):
            for j, t in enumerate(taus):
                w.writerow([repr(float(x)), repr(float(t)), repr(float(true_q[i, j])),
                            repr(float(est_q[i, j]))])

"""Kernel-smoothed likelihood training of a CPFN.

The per-step objective is the Monte Carlo negative log-likelihood

    L = -(1/n) sum_i log[ delta + (1/R) sum_j k_eps(y_i - phi(x_i, u_ij)) ]

with the ``u_ij`` drawn afresh on every optimizer step.  The log-bandwidth
is part of the parameter vector and is optimized jointly unless
``train_bandwidth`` is off.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .data import Dataset, validation_split
from .errors import (DegenerateColumnWarning, InvalidConfig, NonFiniteLoss, NonFiniteValue,
                     NumericalError)
from .kernels import scaled_kernel_eval
from .model import CPFNModel, Standardization, draw_latent, init_model, push_forward
from .provenance import config_hash

log = logging.getLogger(__name__)

# rows * R * width above which the gradient is accumulated chunk by chunk
_CHUNK_ELEMENTS = 2_000_000


@dataclass
class ModelConfig:
    rank: int = 20
    hidden_widths: tuple = (50, 50, 50)
    latent: str = "standard_normal"
    kernel: str = "gaussian"

    def __post_init__(self):
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)
        if self.rank < 1 or not self.hidden_widths or min(self.hidden_widths) < 1:
            raise InvalidConfig("rank and hidden widths must be positive")


@dataclass
class TrainConfig:
    epochs: int = 3000
    R: int = 30
    delta: float = 1e-15
    eps0: object = 0.05
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.0
    batch_size: object = None
    train_bandwidth: bool = True
    shared_latent: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not isinstance(self.epochs, (int, np.integer)) or self.epochs < 1:
            raise InvalidConfig("epochs must be an integer >= 1")
        if self.R < 1:
            raise InvalidConfig("R must be >= 1")
        if not self.delta > 0:
            raise InvalidConfig("delta must be > 0")
        eps0 = np.atleast_1d(np.asarray(self.eps0, dtype=np.float64))
        if np.any(~(eps0 > 0)) or np.any(~np.isfinite(eps0)):
            raise InvalidConfig("eps0 must be positive")
        if not 0 <= self.validation_fraction < 1:
            raise InvalidConfig("validation_fraction must lie in [0, 1)")
        if self.batch_size is not None and int(self.batch_size) < 1:
            raise InvalidConfig("batch_size must be positive or null for full batch")
        if self.learning_rate <= 0 or not (0 <= self.adam_beta1 < 1) or not (0 <= self.adam_beta2 < 1):
            raise InvalidConfig("invalid Adam settings")

    def to_dict(self):
        d = asdict(self)
        d["eps0"] = np.asarray(self.eps0, dtype=float).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass
class TrainingTrace:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = math.inf
    final_val_loss: float = math.nan
    best_val_loss: float = math.nan
    bandwidth: list = field(default_factory=list)
    diagnostic: str = ""

    @property
    def epochs(self):
        return len(self.train_loss)

    def rows(self):
        for e, tl in enumerate(self.train_loss, start=1):
            vl = self.val_loss[e - 1] if e - 1 < len(self.val_loss) else math.nan
            yield e, tl, vl

    def to_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for e, tl, vl in self.rows():
                w.writerow([e, repr(float(tl)), "" if math.isnan(vl) else repr(float(vl))])


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------


def _column_stats(A, label):
    if A.shape[0] < 2:
        raise InvalidConfig("standardization needs at least two rows")
    mean = A.mean(axis=0)
    std = A.std(axis=0, ddof=1)
    bad = ~(std > 0) | ~np.isfinite(std)
    if np.any(bad):
        warnings.warn(f"constant {label} column(s) {np.flatnonzero(bad).tolist()}; std clamped to 1",
                      DegenerateColumnWarning, stacklevel=3)
        std = np.where(bad, 1.0, std)
    return Standardization(mean, std)


def standardize_fit(data: Dataset):
    """Per-column sample mean and (n-1)-denominator std of X and Y."""
    return _column_stats(data.X, "covariate"), _column_stats(data.Y, "response")


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def _log_eps_source(model, flat, train_bandwidth):
    s = model.params.segment("log_eps")
    if train_bandwidth and isinstance(flat, ad.Var):
        return flat[s.offset:s.offset + s.size]
    return model.params.values[s.offset:s.offset + s.size]


def _loss_sum(model, flat, xs, ys, us, delta, train_bandwidth=True):
    """sum_i -log(delta + mean_j k_eps(y_i - phi(x_i, u_ij))) over the given rows."""
    out = push_forward(model, xs, us, flat)
    diff = ys[:, None, :] - out
    k = scaled_kernel_eval(model.kernel, None, diff, log_eps=_log_eps_source(model, flat, train_bandwidth))
    inner = k.mean(axis=1) + delta
    return -(ad.log(inner).sum())


def _rows(us, sl):
    """Row block of per-row draws; shared draws (leading axis 1) pass through."""
    return us if us.shape[0] == 1 else us[sl]


def _chunk_rows(model, R):
    width = max(max(model.psi_arch.hidden_widths), model.rank * model.q)
    return max(1, _CHUNK_ELEMENTS // (R * width))


def cpfn_loss(model: CPFNModel, xs, ys, R, delta, rng, us=None) -> float:
    """Monte Carlo training loss at fresh latent draws (standardized data)."""
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    n = xs.shape[0]
    if us is None:
        us = draw_latent(model.latent, rng, (n, R, model.q))
    total = 0.0
    step = _chunk_rows(model, us.shape[1])
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for a in range(0, n, step):
                total += float(_loss_sum(model, model.params.values, xs[a:a + step], ys[a:a + step],
                                         _rows(us, slice(a, a + step)), delta))
    except FloatingPointError as exc:
        raise NonFiniteLoss(f"loss is not finite: {exc}") from None
    value = total / n
    if not math.isfinite(value):
        raise NonFiniteLoss("loss is not finite (bandwidth collapsed?)")
    return value


def loss_gradient(model: CPFNModel, xs, ys, R, delta, rng, train_bandwidth=True, us=None,
                  chunk_rows=None) -> ad.GradientResult:
    """Loss and its exact gradient w.r.t. every parameter, incl. log-bandwidth.

    The same latent draws feed value and gradient.  Large batches are split
    into row chunks whose contributions are summed in index order, so the
    result equals the single-pass gradient up to summation order.
    """
    xs, ys = np.atleast_2d(xs), np.atleast_2d(ys)
    n = xs.shape[0]
    if us is None:
        us = draw_latent(model.latent, rng, (n, R, model.q))
    step = chunk_rows or (n if us.shape[0] == 1 else _chunk_rows(model, us.shape[1]))
    value = 0.0
    grad = np.zeros(model.params.values.size)
    # overflow shows up as a non-finite check failure, so numpy's warning is redundant
    with np.errstate(over="ignore", invalid="ignore"):
        for a in range(0, n, step):
            sl = slice(a, a + step)
            res = ad.evaluate_with_gradient(
                lambda th: _loss_sum(model, th, xs[sl], ys[sl], _rows(us, sl), delta, train_bandwidth),
                model.params)
            value += res.value
            grad += res.gradient
    return ad.GradientResult(value / n, grad / n)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps_hat=1e-8):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    t = state.step_count + 1
    m = beta1 * state.first_moment + (1.0 - beta1) * grads
    v = beta2 * state.second_moment + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps_hat)
    return new, AdamState(m, v, t)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _streams(seed):
    return (np.random.default_rng([seed, 1]),   # validation split
            np.random.default_rng([seed, 2]),   # training collocation + batching
            np.random.default_rng([seed, 3]))   # fixed validation collocation


def train(data: Dataset, model_config: ModelConfig = None, config: TrainConfig = None,
          model: CPFNModel = None, callback=None):
    """Fit a CPFN to ``data``; returns ``(model, trace)``.

    The returned model is the snapshot with the lowest validation loss (or
    lowest training loss when no validation rows are held out).
    """
    model_config = model_config or ModelConfig()
    config = config or TrainConfig()
    config.validate()
    if data.n < 2:
        raise InvalidConfig("training needs at least two rows")

    x_stats, y_stats = standardize_fit(data)
    xs_all, ys_all = x_stats.apply(data.X), y_stats.apply(data.Y)
    split_rng, train_rng, val_rng = _streams(config.seed)
    tr_idx, va_idx = validation_split(data.n, config.validation_fraction, split_rng)
    xs, ys = xs_all[tr_idx], ys_all[tr_idx]
    xv, yv = xs_all[va_idx], ys_all[va_idx]

    if model is None:
        model = init_model(data.d, data.q, model_config.rank, model_config.hidden_widths,
                           model_config.latent, model_config.kernel, config.eps0, config.seed)
    model = model.replace(x_stats=x_stats, y_stats=y_stats, y_transform=data.y_transform)
    model.metadata.update({
        "seed": int(config.seed),
        "config_hash": config_hash({"model": asdict(model_config), "train": config.to_dict()}),
        "n_train": int(tr_idx.size), "n_val": int(va_idx.size),
    })
    use_val = va_idx.size > 0
    u_val = draw_latent(model.latent, val_rng, (va_idx.size, config.R, model.q)) if use_val else None

    n = tr_idx.size
    full_batch = config.batch_size is None or int(config.batch_size) >= n
    bsize = n if full_batch else int(config.batch_size)
    params = model.params.values.copy()
    state = AdamState.zeros(params.size)
    trace = TrainingTrace()
    best = params.copy()
    lr, b1, b2, eh = config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps

    def current(p):
        return model.with_params(p)

    def bandwidth_of(p):
        with np.errstate(over="ignore"):
            return np.exp(p[model.params.segment("log_eps").offset:]).tolist()

    def abort(epoch, exc, last):
        trace.diagnostic = (f"non-finite loss at epoch {epoch} (bandwidth "
                            f"{bandwidth_of(last)}): {exc}")
        log.error(trace.diagnostic)
        raise NonFiniteLoss(trace.diagnostic, model=current(last), trace=trace)

    for epoch in range(1, config.epochs + 1):
        order = np.arange(n) if full_batch else train_rng.permutation(n)
        epoch_loss, start_params = 0.0, params.copy()
        for a in range(0, n, bsize):
            rows = order[a:a + bsize]
            try:
                us = (draw_latent(model.latent, train_rng, (1, config.R, model.q))
                      if config.shared_latent else None)
                g = loss_gradient(current(params), xs[rows], ys[rows], config.R, config.delta,
                                  train_rng, config.train_bandwidth, us=us)
            except (NonFiniteValue, NumericalError, FloatingPointError) as exc:
                abort(epoch, exc, params)
            epoch_loss += g.value * rows.size
            new, state = adam_step(params, g.gradient, state, lr, b1, b2, eh)
            if not np.all(np.isfinite(new)):
                abort(epoch, "non-finite parameters after update", params)
            params = new
        epoch_loss /= n
        trace.train_loss.append(epoch_loss)
        if use_val:
            try:
                vl = cpfn_loss(current(params), xv, yv, config.R, config.delta, None, us=u_val)
            except NonFiniteLoss as exc:
                abort(epoch, exc, start_params)
            trace.val_loss.append(vl)
            score, snapshot = vl, params
        elif full_batch:
            # the step's loss was measured at the pre-update parameters
            score, snapshot = epoch_loss, start_params
        else:
            score, snapshot = epoch_loss, params
        if score < trace.best_score:
            trace.best_score, trace.best_epoch, best = score, epoch, snapshot.copy()
        trace.bandwidth.append(bandwidth_of(params))
        if callback is not None:
            callback(epoch, trace)

    if use_val:
        trace.final_val_loss = trace.val_loss[-1]
        trace.best_val_loss = trace.best_score
    return current(best), trace


# ---------------------------------------------------------------------------
# Finite-difference check of the loss gradient
# ---------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    max_abs_error: float
    n_params: int
    loss: float

    def to_dict(self):
        return asdict(self)


def relative_error(a, b, floor=1e-6):
    """Componentwise |a - b| / max(|a|, |b|, floor)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(d=2, q=1, rank=3, width=6, layers=2, n=4, R=3, seed=0, eps0=0.5,
                   latent="standard_normal", kernel="gaussian", delta=1e-15, step=1e-3,
                   floor=1e-6, order=4) -> GradCheckResult:
    """Compare the reverse-mode loss gradient with central differences.

    A random model and batch are drawn from ``seed``; the latent draws are
    held fixed so both gradients see the same objective.
    """
    rng = np.random.default_rng([seed, 0x6C])
    model = init_model(d, q, rank, (width,) * layers, latent, kernel, eps0, seed)
    # perturb every parameter so biases and the bandwidth are exercised too
    values = model.params.values + 0.1 * rng.standard_normal(model.params.values.size)
    model = model.with_params(values)
    xs = rng.standard_normal((n, d))
    ys = rng.standard_normal((n, q))
    us = draw_latent(model.latent, rng, (n, R, q))

    def program(theta):
        return _loss_sum(model, theta, xs, ys, us, delta) * (1.0 / n)

    res = ad.evaluate_with_gradient(program, model.params)
    fd = ad.finite_difference_gradient(program, model.params, step, order)
    # finite-difference round-off grows with the loss value, so the floor does too
    floor = floor * max(1.0, abs(res.value))
    return GradCheckResult(float(relative_error(res.gradient, fd, floor).max()),
                           float(np.abs(res.gradient - fd).max()), int(values.size), res.value)

"""Run configuration, k-fold NLL benchmarking and simulation studies."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import Dataset, kfold_split
from .errors import CPFNError, InvalidConfig
from .inference import conditional_density, sample_conditional
from .kcde import kcde_fit, kcde_fmax, kcde_sample_ar
from .metrics import (EvalReport, aqe, awd_multivariate, awd_univariate, empirical_quantile_source,
                      nll)
from .provenance import config_hash
from .simulators import get_process
from .training import ModelConfig, TrainConfig, train

log = logging.getLogger(__name__)

WORKERS_ENV = "CPFN_NUM_WORKERS"
TABLE_TAUS = (0.1, 0.25, 0.5, 0.75, 0.9)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _strict(cls, d, section):
    if not isinstance(d, dict):
        raise InvalidConfig(f"section {section!r} must be a JSON object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise InvalidConfig(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise InvalidConfig(f"bad {section!r} section: {exc}") from None


@dataclass
class EvalConfig:
    R_X: int = 1000            # x grid intervals (univariate) or covariate draws (multivariate)
    R_tau: int = 100
    R_Y: int = 1000            # conditional samples per covariate
    R_density: int = 1000
    taus: tuple = TABLE_TAUS
    kcde_rule: str = "silverman"
    noise_floor: bool = True

    def __post_init__(self):
        self.taus = tuple(float(t) for t in self.taus)
        if min(self.R_X, self.R_tau, self.R_Y, self.R_density) < 1:
            raise InvalidConfig("evaluation sizes must be >= 1")
        if any(not 0 < t < 1 for t in self.taus):
            raise InvalidConfig("taus must lie strictly between 0 and 1")
        if self.kcde_rule not in ("silverman", "cv"):
            raise InvalidConfig("kcde_rule must be 'silverman' or 'cv'")


@dataclass
class RunConfig:
    """Everything a command needs besides file paths; built from JSON."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    SECTIONS = {"model": ModelConfig, "train": TrainConfig, "eval": EvalConfig}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise InvalidConfig("configuration must be a JSON object")
        unknown = set(d) - set(cls.SECTIONS) - {"seed"}
        if unknown:
            raise InvalidConfig(f"unknown configuration keys: {sorted(unknown)}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise InvalidConfig("seed must be a non-negative integer")
        parts = {k: _strict(c, d.get(k, {}), k) for k, c in cls.SECTIONS.items()}
        parts["train"].seed = seed if "seed" in d else parts["train"].seed
        return cls(seed=seed, **parts)

    def to_dict(self):
        return {"model": asdict(self.model), "train": self.train.to_dict(),
                "eval": asdict(self.eval), "seed": self.seed}

    @property
    def hash(self):
        return config_hash(self.to_dict())


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Read a JSON config (or defaults) and apply ``section.key=value`` overrides."""
    doc = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config {path} is not valid JSON: {exc}") from None
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise InvalidConfig(f"override {item!r} must look like section.key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if key == "seed":
            doc["seed"] = value
            continue
        section, _, name = key.partition(".")
        if not name:
            raise InvalidConfig(f"override {item!r} must look like section.key=value")
        doc.setdefault(section, {})[name] = value
    return RunConfig.from_dict(doc)


def derive_seed(*parts) -> int:
    """Independent 32-bit seed for a (master seed, index, ...) tuple."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def worker_count(default=1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise InvalidConfig(f"{WORKERS_ENV} must be an integer") from None
    return max(1, n)


def _map(fn, jobs, workers):
    """Ordered map; a process pool when more than one worker is requested."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------------------
# Samplers wrapping fitted models
# ---------------------------------------------------------------------------


def cpfn_grid_sampler(model, block=25):
    """``f(xs (k, d), m, rng) -> (k, m, q)``, evaluated in covariate blocks."""

    def sampler(xs, m, rng):
        xs = np.atleast_2d(xs)
        return np.concatenate([sample_conditional(model, xs[a:a + block], m, rng)
                               for a in range(0, xs.shape[0], block)])

    return sampler


def kcde_grid_sampler(kmodel, f_max=None):
    def sampler(xs, m, rng):
        xs = np.atleast_2d(xs)
        bound = kcde_fmax(kmodel, xs) if f_max is None else f_max
        return np.stack([kcde_sample_ar(kmodel, x, m, rng, f_max=bound) for x in xs])

    return sampler


# ---------------------------------------------------------------------------
# k-fold NLL
# ---------------------------------------------------------------------------


@dataclass
class KFoldResult:
    per_fold: list
    mean: float
    folds: list
    config_hash: str
    seed: int

    def to_report(self) -> EvalReport:
        return EvalReport({"nll_mean": self.mean, "nll_per_fold": self.per_fold}, self.config_hash,
                          self.seed, {"k": len(self.per_fold)})


def _fold_job(job):
    data, split, i, cfg = job
    tr, te = split.train_test(i)
    tcfg = TrainConfig.from_dict({**cfg.train.to_dict(), "validation_fraction": 0.1,
                                  "seed": derive_seed(cfg.seed, 0xF0, i)})
    try:
        model, _ = train(data.subset(tr), cfg.model, tcfg)
        test = data.subset(te)
        return nll(lambda X, Y: conditional_density(model, X, Y, cfg.eval.R_density),
                   test.X, test.raw_y())
    except CPFNError as exc:
        exc.fold = i
        if exc.args and isinstance(exc.args[0], str):
            exc.args = (f"fold {i}: {exc.args[0]}",) + exc.args[1:]
        raise


def kfold_nll(data: Dataset, k: int = 5, config: RunConfig = None, seed: int = None,
              workers: int = None) -> KFoldResult:
    """Held-out NLL per fold, each model trained with a 10% validation split.

    Densities are evaluated in the raw response scale.
    """
    config = config or RunConfig()
    seed = config.seed if seed is None else seed
    if k < 2 or data.n < k:
        raise InvalidConfig("need k >= 2 and at least k rows")
    split = kfold_split(data.n, k, seed)
    cfg = RunConfig(config.model, config.train, config.eval, seed)
    vals = _map(_fold_job, [(data, split, i, cfg) for i in range(k)],
                worker_count() if workers is None else workers)
    return KFoldResult([float(v) for v in vals], float(np.mean(vals)),
                       [f.tolist() for f in split.folds], cfg.hash, seed)


# ---------------------------------------------------------------------------
# Simulation studies
# ---------------------------------------------------------------------------


@dataclass
class ReplicateResult:
    n: int
    replicate: int
    metrics: dict
    error: str = None


def _univariate_metrics(process, sampler, eval_cfg, rng):
    est = empirical_quantile_source(sampler, eval_cfg.R_Y, rng)
    out = {"awd": awd_univariate(process.quantile_grid, est, eval_cfg.R_X, eval_cfg.R_tau)}
    for t in eval_cfg.taus:
        out[f"aqe_{t:g}"] = aqe(process.quantile_grid, est, t, eval_cfg.R_X)
    return out


def _multivariate_metrics(process, sampler, eval_cfg, seed):
    def est(x, m, rng):
        return sampler(np.atleast_2d(x), m, rng)[0]

    res = awd_multivariate(process.sample_conditional, est, process.covariates, eval_cfg.R_X,
                           eval_cfg.R_Y, np.random.default_rng([seed, 7]),
                           noise_floor=eval_cfg.noise_floor)
    return {"awd": res.awd, "noise_floor": res.noise_floor}


def _replicate_job(job):
    process_name, n, rep, cfg, methods = job
    process = get_process(process_name)
    rseed = derive_seed(cfg.seed, n, rep)
    data = process.generate(n, np.random.default_rng([rseed, 0]))
    out = {}
    try:
        if "cpfn" in methods:
            tcfg = TrainConfig.from_dict({**cfg.train.to_dict(), "seed": derive_seed(rseed, 1)})
            model, trace = train(data, cfg.model, tcfg)
            sampler = cpfn_grid_sampler(model)
            out["cpfn"] = _method_metrics(process, sampler, cfg.eval, rseed)
            out["cpfn"]["bandwidth"] = float(model.bandwidth()[0])
        if "kcde" in methods:
            kmodel = kcde_fit(data, cfg.eval.kcde_rule)
            sampler = kcde_grid_sampler(kmodel)
            if process.q > 1:
                # one density bound shared across the evaluation covariates
                xs = process.covariates(cfg.eval.R_X, np.random.default_rng([rseed, 7]))
                sampler = kcde_grid_sampler(kmodel, kcde_fmax(kmodel, xs))
            out["kcde"] = _method_metrics(process, sampler, cfg.eval, rseed)
    except CPFNError as exc:
        log.warning("replicate n=%d #%d failed: %s", n, rep, exc)
        return ReplicateResult(n, rep, out, f"{type(exc).__name__}: {exc}")
    return ReplicateResult(n, rep, out)


def run_replicate(process: str, n: int, replicate: int, config: RunConfig,
                  methods=("cpfn", "kcde")) -> ReplicateResult:
    """One (n, replicate) cell of a simulation study; seeds derive from config.seed."""
    return _replicate_job((process, int(n), int(replicate), config, tuple(methods)))


def _method_metrics(process, sampler, eval_cfg, rseed):
    if process.q == 1:
        return _univariate_metrics(process, sampler, eval_cfg, np.random.default_rng([rseed, 5]))
    return _multivariate_metrics(process, sampler, eval_cfg, rseed)


@dataclass
class SimStudyResult:
    process: str
    replicates: list
    config_hash: str
    seed: int

    def summary(self):
        """{method: {n: {metric: (mean, sd, count)}}} over successful replicates."""
        table = {}
        for r in self.replicates:
            for method, vals in r.metrics.items():
                for key, v in vals.items():
                    table.setdefault(method, {}).setdefault(r.n, {}).setdefault(key, []).append(v)
        out = {}
        for method, by_n in table.items():
            for n, by_key in by_n.items():
                for key, vs in by_key.items():
                    vs = np.asarray(vs, dtype=np.float64)
                    sd = float(vs.std(ddof=1)) if vs.size > 1 else 0.0
                    out.setdefault(method, {}).setdefault(n, {})[key] = (float(vs.mean()), sd, int(vs.size))
        return out

    def failures(self):
        return [(r.n, r.replicate, r.error) for r in self.replicates if r.error]

    def to_report(self) -> EvalReport:
        metrics = {m: {str(n): {k: {"mean": v[0], "sd": v[1], "count": v[2]} for k, v in by_key.items()}
                       for n, by_key in by_n.items()} for m, by_n in self.summary().items()}
        return EvalReport(metrics, self.config_hash, self.seed,
                          extra={"process": self.process,
                                 "failures": [list(f) for f in self.failures()]})

    def to_table_csv(self, path):
        """One row per (method, n) with 'mean (sd)' cells, Table-1 style."""
        summ = self.summary()
        keys = []
        for by_n in summ.values():
            for by_key in by_n.values():
                keys += [k for k in by_key if k not in keys]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(["method", "n"] + keys) + "\n")
            for method in sorted(summ):
                for n in sorted(summ[method]):
                    cells = [f"{summ[method][n][k][0]:.3f} ({summ[method][n][k][1]:.3f})"
                             if k in summ[method][n] else "" for k in keys]
                    fh.write(",".join([method, str(n)] + cells) + "\n")


def run_sim_study(process: str, n_list, replicates: int, config: RunConfig = None, seed: int = None,
                  methods=("cpfn", "kcde"), workers: int = None) -> SimStudyResult:
    """Fit and score each method on fresh simulated data for every (n, replicate).

    Failed replicates are recorded and skipped in the aggregates.
    """
    config = config or RunConfig()
    seed = config.seed if seed is None else seed
    if replicates < 1:
        raise InvalidConfig("replicates must be >= 1")
    get_process(process)
    bad = set(methods) - {"cpfn", "kcde"}
    if bad:
        raise InvalidConfig(f"unknown methods {sorted(bad)}")
    cfg = RunConfig(config.model, config.train, config.eval, seed)
    jobs = [(process, int(n), rep, cfg, tuple(methods)) for n in n_list for rep in range(replicates)]
    results = _map(_replicate_job, jobs, worker_count() if workers is None else workers)
    return SimStudyResult(process, results, cfg.hash, seed)

"""End-to-end acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The long studies (criteria 4, 5, 6 and 8) store their raw results under
``tests/.acceptance_cache``, keyed by the criterion configuration and a
digest of the package sources, so any code change forces a recomputation.
Set ``CPFN_ACCEPTANCE_RECOMPUTE=1`` to ignore the cache.

Criterion 10 needs a user-supplied CSV: set ``CPFN_UCI_CSV``,
``CPFN_UCI_X`` (comma-separated covariate columns), ``CPFN_UCI_Y`` and
optionally ``CPFN_UCI_DATASET`` (name for the time budget) and
``CPFN_UCI_TRANSFORM`` (identity or log1p).
"""
import hashlib
import itertools
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import cumulative_trapezoid, trapezoid

import cpfn
from cpfn.cli import main as cli_main
from cpfn.data import Dataset, ingest_csv
from cpfn.harness import ReplicateResult, RunConfig, SimStudyResult, kfold_nll, run_replicate
from cpfn.inference import conditional_density, sample_conditional
from cpfn.kcde import accept_reject, kcde_density, kcde_fit, kcde_fmax, kcde_sample_ar
from cpfn.metrics import w1_assignment, w1_sorted_1d
from cpfn.model import init_model
from cpfn.simulators import gen_univariate
from cpfn.training import ModelConfig, TrainConfig, gradient_check, train

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance

CACHE = Path(__file__).parent / ".acceptance_cache"
SRC = Path(cpfn.__file__).parent


def record(num, title, passed, detail, seconds):
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"criterion {num:2d} {status}  {title}: {detail} [{seconds:.1f}s]"
    ACCEPTANCE_LINES.append(line)
    print(line)


def source_digest():
    h = hashlib.sha256()
    for p in sorted(SRC.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


def cached(name, key_obj, compute):
    """Load ``name`` from the cache if its key matches, else compute and store."""
    key = hashlib.sha256(json.dumps([key_obj, source_digest()], sort_keys=True).encode()).hexdigest()[:16]
    path = CACHE / f"{name}-{key}.json"
    if path.exists() and os.environ.get("CPFN_ACCEPTANCE_RECOMPUTE") != "1":
        return json.loads(path.read_text())
    t = time.time()
    value = compute()
    doc = {"value": value, "seconds": time.time() - t}
    CACHE.mkdir(exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True))
    return doc


# ---------------------------------------------------------------------------
# 1. Gradient fidelity
# ---------------------------------------------------------------------------


def test_criterion_1_gradient_fidelity():
    t = time.time()
    rng = np.random.default_rng(20240101)
    worst = 0.0
    for i in range(50):
        res = gradient_check(d=int(rng.integers(1, 4)), q=int(rng.integers(1, 4)),
                             rank=int(rng.integers(1, 5)), width=int(rng.integers(2, 9)),
                             layers=int(rng.integers(1, 4)), n=int(rng.integers(1, 7)),
                             R=int(rng.integers(1, 6)), seed=1000 + i,
                             eps0=float(rng.uniform(0.2, 1.5)))
        worst = max(worst, res.max_rel_error)
    passed = worst < 1e-5
    record(1, "gradient fidelity", passed, f"max rel error {worst:.2e} over 50 instances (< 1e-5)",
           time.time() - t)
    assert passed


# ---------------------------------------------------------------------------
# 2. Density normalization
# ---------------------------------------------------------------------------


def integrate_density(model, x, R_density=1000):
    """Trapezoid integral of the q=1 conditional density over its support."""
    us = np.random.default_rng(cpfn.inference.DENSITY_SEED)
    centers = sample_conditional(model, x, R_density, us)[:, 0]
    h = float(model.bandwidth()[0] * model.y_stats.std[0])
    grid = np.arange(centers.min() - 10 * h, centers.max() + 10 * h, h / 20)
    return trapezoid(conditional_density(model, x, grid, R_density), grid)


def test_criterion_2_density_normalization():
    t = time.time()
    integrals = []
    mc = ModelConfig(rank=4, hidden_widths=(12, 12))
    for s in range(10):
        data = gen_univariate(200, np.random.default_rng([s, 2]))
        model, _ = train(data, mc, TrainConfig(epochs=60, R=10, eps0=0.2, seed=s, learning_rate=5e-3))
        integrals.append(integrate_density(model, [0.3 + 0.04 * s]))
    rng = np.random.default_rng(2)
    for s in range(10):
        model = init_model(1, 1, r=int(rng.integers(1, 6)), hidden_widths=(8, 8), seed=100 + s,
                           eps0=float(rng.uniform(0.05, 1.0)))
        integrals.append(integrate_density(model, [float(rng.normal())]))
    err = float(np.max(np.abs(np.array(integrals) - 1.0)))
    passed = err <= 0.02
    record(2, "density normalization", passed,
           f"max |integral - 1| = {err:.2e} over 10 trained + 10 random models (<= 0.02)", time.time() - t)
    assert passed


# ---------------------------------------------------------------------------
# 3. OT correctness
# ---------------------------------------------------------------------------


def brute_force_w1(a, b):
    m = a.shape[0]
    C = np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1))
    perms = np.array(list(itertools.permutations(range(m))))
    # same summation order as the solver: one row of costs per permutation, then mean
    return float(C[np.arange(m), perms].mean(axis=1).min())


def test_criterion_3_ot_correctness():
    t = time.time()
    rng = np.random.default_rng(3)
    exact = 0
    for _ in range(200):
        m = int(rng.integers(1, 8))
        a, b = rng.normal(size=(m, 2)), rng.normal(size=(m, 2))
        exact += w1_assignment(a, b).cost == brute_force_w1(a, b)
    gap = 0.0
    for _ in range(200):
        m = int(rng.integers(1, 101))
        a, b = rng.normal(size=m), rng.exponential(size=m)
        gap = max(gap, abs(w1_sorted_1d(a, b) - w1_assignment(a, b).cost))
    passed = exact == 200 and gap <= 1e-10
    record(3, "OT correctness", passed,
           f"{exact}/200 exact matches with permutation search; 1D max gap {gap:.1e} (<= 1e-10)",
           time.time() - t)
    assert passed


# ---------------------------------------------------------------------------
# 4 and 5. Univariate benchmark and consistency trend
# ---------------------------------------------------------------------------

UNIVARIATE = {"seed": 2024}    # defaults are the reference configuration
SIZES = (250, 500, 1000)
REPLICATES = 10


def univariate_replicates():
    cfg = RunConfig.from_dict(UNIVARIATE)
    out = {}
    for n in SIZES:
        for rep in range(REPLICATES):
            doc = cached(f"univariate-n{n}-r{rep}", cfg.to_dict(),
                         lambda: run_replicate("univariate", n, rep, cfg, ("cpfn",)).__dict__)
            out[(n, rep)] = doc
    return cfg, out


def univariate_summary():
    cfg, docs = univariate_replicates()
    reps = [ReplicateResult(**d["value"]) for d in docs.values()]
    res = SimStudyResult("univariate", reps, cfg.hash, cfg.seed)
    seconds = sum(d["seconds"] for d in docs.values())
    return res, seconds


def test_criterion_4_univariate_benchmark():
    res, seconds = univariate_summary()
    summ = res.summary()["cpfn"][1000]
    awd, aqe25 = summ["awd"][0], summ["aqe_0.25"][0]
    ok_count = summ["awd"][2] == REPLICATES
    passed = ok_count and 0.027 <= awd <= 0.075 and aqe25 <= 0.051
    record(4, "univariate benchmark", passed,
           f"n=1000 mean AWD {awd:.4f} (sd {summ['awd'][1]:.4f}) in [0.027, 0.075]; "
           f"mean AQE(0.25) {aqe25:.4f} <= 0.051; {summ['awd'][2]} replicates", seconds)
    assert passed


def test_criterion_5_consistency_trend():
    res, seconds = univariate_summary()
    summ = res.summary()["cpfn"]
    means = [summ[n]["awd"][0] for n in SIZES]
    passed = means[0] > means[1] > means[2] and not res.failures()
    record(5, "consistency trend", passed,
           "mean AWD " + " > ".join(f"{m:.4f} (n={n})" for m, n in zip(means, SIZES)), seconds)
    assert passed


# ---------------------------------------------------------------------------
# 6. Multivariate dominance
# ---------------------------------------------------------------------------

MULTIVARIATE = {
    "model": {"rank": 50},
    "train": {"epochs": 2000, "R": 100, "eps0": [0.05, 0.05], "shared_latent": True},
    "eval": {"R_X": 30, "R_Y": 200},
    "seed": 2024,
}


def test_criterion_6_multivariate_dominance():
    cfg = RunConfig.from_dict(MULTIVARIATE)
    doc = cached("multivariate-n5000", cfg.to_dict(),
                 lambda: run_replicate("multivariate", 5000, 0, cfg, ("cpfn", "kcde")).__dict__)
    m = doc["value"]["metrics"]
    if doc["value"]["error"]:
        record(6, "multivariate dominance", False, doc["value"]["error"], doc["seconds"])
        pytest.fail(doc["value"]["error"])
    c, k, floor = m["cpfn"]["awd"], m["kcde"]["awd"], m["cpfn"]["noise_floor"]
    passed = c < k and c < 2 * floor + 0.4
    record(6, "multivariate dominance", passed,
           f"AWD cpfn {c:.4f} < kcde {k:.4f}; cpfn < 2*floor+0.4 = {2 * floor + 0.4:.4f}", doc["seconds"])
    assert passed


# ---------------------------------------------------------------------------
# 7. Acceptance-rejection correctness
# ---------------------------------------------------------------------------


def test_criterion_7_acceptance_rejection():
    t = time.time()
    rng = np.random.default_rng(7)
    stats_out = {}
    # target equal to the uniform proposal density on [0, 2]
    accept_reject(lambda c: np.full(len(c), 0.5), [0.0], [2.0], 0.5, 10_000, rng, stats=stats_out)
    rate = stats_out["accepted"] / stats_out["proposed"]
    data = gen_univariate(400, np.random.default_rng(70))
    model = kcde_fit(data)
    x = 0.7
    f_max = kcde_fmax(model, [[x]])
    draws = kcde_sample_ar(model, [x], 10_000, rng, f_max=f_max)[:, 0]
    lo, hi = model.support_box()
    grid = np.linspace(lo[0], hi[0], 20_001)
    cdf = cumulative_trapezoid(kcde_density(model, [x], grid), grid, initial=0.0)
    cdf /= cdf[-1]
    ks = stats.kstest(draws, lambda v: np.interp(v, grid, cdf))
    passed = abs(rate - 1 / 1.1) <= 0.02 and ks.pvalue > 0.01
    record(7, "acceptance-rejection", passed,
           f"uniform acceptance rate {rate:.4f} (1/1.1 +- 0.02); KS D={ks.statistic:.4f} "
           f"p={ks.pvalue:.3f} (> 0.01)", time.time() - t)
    assert passed


# ---------------------------------------------------------------------------
# 8. NLL sanity
# ---------------------------------------------------------------------------

NLL_CONFIG = {
    "model": {"rank": 3, "hidden_widths": [8, 8]},
    "train": {"epochs": 1000, "R": 30, "eps0": 0.05, "learning_rate": 1e-2},
    "seed": 2024,
}
GAUSS_ENTROPY = 0.5 * math.log(2 * math.pi) + 0.5


def nll_runs():
    cfg = RunConfig.from_dict(NLL_CONFIG)
    rng = np.random.default_rng(8)
    X, y = rng.random((2000, 1)), rng.standard_normal((2000, 1))
    plain = Dataset(X, y)
    logged = Dataset(X, np.expm1(y)).with_transform("log1p")

    def run(data):
        r = kfold_nll(data, 5, cfg)
        return {"per_fold": r.per_fold, "mean": r.mean, "folds": r.folds}

    a = cached("nll-plain", cfg.to_dict(), lambda: run(plain))
    b = cached("nll-log1p", cfg.to_dict(), lambda: run(logged))
    return y[:, 0], a, b


def test_criterion_8_nll_sanity():
    y, a, b = nll_runs()
    plain, logged = a["value"], b["value"]
    # change of variables: -log f(y') = -log f(y) + y with y' = exp(y) - 1
    shift = np.mean([np.mean(y[np.array(f)]) for f in plain["folds"]])
    back = logged["mean"] - shift
    passed = abs(plain["mean"] - GAUSS_ENTROPY) <= 0.15 and abs(back - plain["mean"]) <= 0.15
    record(8, "NLL sanity", passed,
           f"mean NLL {plain['mean']:.4f} vs {GAUSS_ENTROPY:.4f} (+-0.15); log1p run mapped back "
           f"{back:.4f} (+-0.15 of plain)", a["seconds"] + b["seconds"])
    assert passed


# ---------------------------------------------------------------------------
# 9. Determinism
# ---------------------------------------------------------------------------

TINY = ["--set", "model.rank=2", "--set", "model.hidden_widths=[4]", "--set", "train.epochs=5",
        "--set", "train.R=4"]


def run_all_commands(d):
    d.mkdir()
    data = ["--data", str(d / "u.csv"), "--x-columns", "x", "--y-columns", "y"]
    model = ["--model", str(d / "m.json"), "--x", "0.2", "--x", "0.8"]
    codes = [
        cli_main(["simulate", "--process", "univariate", "--n", "60", "--seed", "4", "--out", str(d / "u.csv")]),
        cli_main(["train"] + data + TINY + ["--seed", "9", "--out", str(d / "m.json"),
                                            "--trace", str(d / "t.csv")]),
        cli_main(["sample"] + model + ["--m", "50", "--seed", "1", "--out", str(d / "s.csv")]),
        cli_main(["density"] + model + ["--y", "0.1", "--R-density", "200", "--out", str(d / "d.json")]),
        cli_main(["quantiles"] + model + ["--m", "300", "--out", str(d / "q.json")]),
        cli_main(["eval-sim", "--process", "univariate", "--n-list", "40", "--out-dir", str(d / "sim"),
                  "--set", "eval.R_X=10", "--set", "eval.R_tau=10", "--set", "eval.R_Y=30"] + TINY),
        cli_main(["eval-nll"] + data + TINY + ["--k", "2", "--set", "eval.R_density=50",
                                               "--out", str(d / "nll.json")]),
    ]
    return codes, {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_criterion_9_determinism(tmp_path, capsys):
    t = time.time()
    codes1, files1 = run_all_commands(tmp_path / "a")
    codes2, files2 = run_all_commands(tmp_path / "b")
    g1 = cli_main(["gradcheck", "--seed", "3"])
    out1 = capsys.readouterr().out
    g2 = cli_main(["gradcheck", "--seed", "3"])
    out2 = capsys.readouterr().out
    same = files1.keys() == files2.keys() and all(files1[k] == files2[k] for k in files1)
    passed = codes1 == codes2 == [0] * 7 and g1 == g2 == 0 and out1 == out2 and same
    record(9, "determinism", passed,
           f"{len(files1)} artifacts from 8 subcommands identical across reruns: {same}", time.time() - t)
    assert passed


# ---------------------------------------------------------------------------
# 10. UCI-shaped regression (optional)
# ---------------------------------------------------------------------------

# per-fold laptop training times in seconds
LAPTOP_FOLD_SECONDS = {
    "energy": 2727, "synchronous": 207, "localization": 92, "toxicity": 281, "concrete": 323,
    "slump": 97, "forestfires": 197, "navalpropolsion": 3116, "sml2010": 742, "thermography": 304,
    "support2": 2445, "superconductivity": 5875,
}
UCI_CONFIG = {
    "model": {"rank": 50},
    "train": {"epochs": 2000, "R": 100, "shared_latent": True},
    "seed": 2024,
}


def test_criterion_10_uci_shaped_regression():
    path = os.environ.get("CPFN_UCI_CSV")
    if not path:
        record(10, "UCI-shaped regression", None, "optional; set CPFN_UCI_CSV to run", 0.0)
        pytest.skip("no user-supplied dataset")
    t = time.time()
    data = ingest_csv(path, os.environ["CPFN_UCI_X"].split(","), os.environ["CPFN_UCI_Y"].split(","),
                      os.environ.get("CPFN_UCI_TRANSFORM", "identity"))
    name = os.environ.get("CPFN_UCI_DATASET", "")
    budget = 2 * 5 * LAPTOP_FOLD_SECONDS.get(name, max(LAPTOP_FOLD_SECONDS.values()))
    res = kfold_nll(data, 5, RunConfig.from_dict(UCI_CONFIG))
    elapsed = time.time() - t
    passed = data.n <= 10_000 and all(np.isfinite(res.per_fold)) and elapsed <= budget
    record(10, "UCI-shaped regression", passed,
           f"n={data.n}, mean NLL {res.mean:.4f}, {elapsed:.0f}s within budget {budget}s", elapsed)
    assert passed

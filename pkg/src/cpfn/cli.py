"""Command-line entry point: ``cpfn <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import errors
from .data import ingest_csv, write_csv
from .harness import kfold_nll, load_run_config, run_sim_study
from .inference import DEFAULT_TAUS, conditional_density, conditional_quantile, sample_conditional
from .model import load_model, save_model
from .simulators import get_process
from .training import gradient_check, train

log = logging.getLogger("cpfn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise errors.InvalidConfig(f"expected comma-separated numbers, got {text!r}") from None


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()] if text else []


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _config(args):
    cfg = load_run_config(args.config, args.set)
    if args.seed is not None:
        cfg = load_run_config(args.config, list(args.set or ()) + [f"seed={args.seed}"])
    return cfg


def _load_data(args):
    return ingest_csv(args.data, _names(args.x_columns), _names(args.y_columns), args.y_transform,
                      discrete_columns=_names(args.discrete), one_hot=args.one_hot)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    process = get_process(args.process)
    if args.n < 1:
        raise errors.InvalidConfig("n must be >= 1")
    data = process.generate(args.n, np.random.default_rng(args.seed))
    write_csv(data, args.out)
    _write_json({"process": process.name, "params": process.params(), "n": args.n, "seed": args.seed},
                args.out + ".json")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    data = _load_data(args)
    model, trace = train(data, cfg.model, cfg.train)
    model.metadata["run_config_hash"] = cfg.hash
    save_model(model, args.out)
    if args.trace:
        trace.to_csv(args.trace, header_comment=f"config_hash={cfg.hash} seed={cfg.train.seed}")
    log.info("trained: best epoch %s, bandwidth %s", trace.best_epoch, model.bandwidth().tolist())
    return EXIT_OK


def _query_points(args, d):
    if args.x_csv:
        import pandas as pd
        X = pd.read_csv(args.x_csv).to_numpy(dtype=np.float64)
    else:
        X = np.array([_floats(x) for x in args.x])
    if X.ndim != 2 or X.shape[1] != d:
        raise errors.DimensionMismatch(f"query covariates must have {d} columns")
    return X


def cmd_sample(args):
    model = load_model(args.model)
    X = _query_points(args, model.d)
    rng = np.random.default_rng(args.seed)
    rows = []
    for i, x in enumerate(X):
        s = sample_conditional(model, x, args.m, rng)
        rows += [[i] + x.tolist() + y.tolist() for y in s]
    header = ["query"] + [f"x{j}" for j in range(model.d)] + [f"y{j}" for j in range(model.q)]
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", encoding="utf-8")
    try:
        out.write(",".join(header) + "\n")
        for r in rows:
            out.write(",".join([str(r[0])] + [repr(float(v)) for v in r[1:]]) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_density(args):
    model = load_model(args.model)
    X = _query_points(args, model.d)
    Y = np.array([_floats(y) for y in args.y])
    if Y.shape[1] != model.q:
        raise errors.DimensionMismatch(f"responses must have {model.q} coordinates")
    records = []
    for i, x in enumerate(X):
        dens = np.atleast_1d(conditional_density(model, x, Y, args.R_density))
        records += [{"query": i, "x": x.tolist(), "y": y.tolist(), "density": float(f)}
                    for y, f in zip(Y, dens)]
    _write_json({"model_config_hash": model.metadata.get("config_hash"), "R_density": args.R_density,
                 "records": records}, args.out)
    return EXIT_OK


def cmd_quantiles(args):
    model = load_model(args.model)
    X = _query_points(args, model.d)
    taus = _floats(args.taus)
    rng = np.random.default_rng(args.seed)
    records = []
    for i, x in enumerate(X):
        q = conditional_quantile(sample_conditional(model, x, args.m, rng), taus)
        records += [{"query": i, "x": x.tolist(), "tau": t, "quantile": q[j].tolist()}
                    for j, t in enumerate(taus)]
    _write_json({"seed": args.seed, "m": args.m, "records": records}, args.out)
    return EXIT_OK


def cmd_eval_sim(args):
    cfg = _config(args)
    n_list = [int(v) for v in _floats(args.n_list)]
    res = run_sim_study(args.process, n_list, args.replicates, cfg, methods=_names(args.methods))
    os.makedirs(args.out_dir, exist_ok=True)
    report = res.to_report()
    report.to_json(os.path.join(args.out_dir, "report.json"))
    report.to_csv(os.path.join(args.out_dir, "report.csv"))
    res.to_table_csv(os.path.join(args.out_dir, "table.csv"))
    for n, rep, err in res.failures():
        log.warning("n=%d replicate %d failed: %s", n, rep, err)
    return EXIT_OK


def cmd_eval_nll(args):
    cfg = _config(args)
    data = _load_data(args)
    res = kfold_nll(data, args.k, cfg)
    report = res.to_report()
    if args.out:
        report.to_json(args.out)
    else:
        _write_json(report.to_dict(), None)
    return EXIT_OK


def cmd_gradcheck(args):
    res = gradient_check(args.d, args.q, args.rank, args.width, args.layers, args.n, args.R, args.seed,
                         args.eps0, kernel=args.kernel, step=args.step)
    _write_json({**res.to_dict(), "tolerance": args.tol, "passed": res.max_rel_error < args.tol}, None)
    if not res.max_rel_error < args.tol:
        return EXIT_NUMERICAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_config(p):
    p.add_argument("--config", help="JSON run configuration (sections model/train/eval, seed)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one configuration value (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")


def _add_data(p):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--x-columns", required=True, help="comma-separated covariate columns")
    p.add_argument("--y-columns", required=True, help="comma-separated response columns")
    p.add_argument("--y-transform", default="identity", choices=["identity", "log1p"])
    p.add_argument("--discrete", default="", help="covariate columns holding category codes")
    p.add_argument("--one-hot", action="store_true", help="one-hot encode the discrete columns")


def _add_query(p):
    p.add_argument("--model", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--x", action="append", help="raw covariate vector, comma-separated (repeatable)")
    g.add_argument("--x-csv", help="CSV of query covariates (header row, d columns)")


def build_parser():
    parser = argparse.ArgumentParser(prog="cpfn", description="Conditional push-forward networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    p.add_argument("--process", required=True, choices=["univariate", "multivariate"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit a model to a CSV dataset")
    _add_data(p)
    _add_config(p)
    p.add_argument("--out", required=True, help="model file (JSON)")
    p.add_argument("--trace", help="per-epoch loss CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="conditional samples as CSV")
    _add_query(p)
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("density", help="conditional density values as JSON")
    _add_query(p)
    p.add_argument("--y", action="append", required=True, help="response vector (repeatable)")
    p.add_argument("--R-density", dest="R_density", type=int, default=1000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("quantiles", help="conditional quantiles as JSON")
    _add_query(p)
    p.add_argument("--taus", default=",".join(str(t) for t in DEFAULT_TAUS))
    p.add_argument("--m", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_quantiles)

    p = sub.add_parser("eval-sim", help="simulation study with AWD/AQE reports")
    p.add_argument("--process", required=True, choices=["univariate", "multivariate"])
    p.add_argument("--n-list", required=True, help="comma-separated sample sizes")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--methods", default="cpfn,kcde")
    p.add_argument("--out-dir", required=True)
    _add_config(p)
    p.set_defaults(func=cmd_eval_sim)

    p = sub.add_parser("eval-nll", help="k-fold held-out negative log-likelihood")
    _add_data(p)
    _add_config(p)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_nll)

    p = sub.add_parser("gradcheck", help="compare loss gradients with finite differences")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--rank", type=int, default=3)
    p.add_argument("--width", type=int, default=6)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--R", type=int, default=3)
    p.add_argument("--eps0", type=float, default=0.5)
    p.add_argument("--kernel", default="gaussian", choices=["gaussian", "epanechnikov"])
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except errors.CPFNError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``cdebench {generate,fit,evaluate,bench,report}``.

Exit status is 0 on success, 2 for usage or configuration errors and 1 for
runtime failures (including any failed benchmark run).
"""
from __future__ import annotations

import argparse
import csv
import json
import pickle
import sys
import time

import numpy as np

from . import datagen, harness
from .exceptions import ConfigurationError

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _json_arg(text):
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"not valid JSON: {exc}") from exc
    if not isinstance(value, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return value


def build_parser():
    ap = argparse.ArgumentParser(prog="cdebench", description="Conditional distribution estimation benchmark.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a dataset (or true density grids) from a data model")
    g.add_argument("--model", required=True)
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--density-grid", action="store_true",
                   help="write true conditional densities at --points random predictor draws")
    g.add_argument("--points", type=int, default=4)

    f = sub.add_parser("fit", help="fit one method on a CSV dataset and pickle the model")
    f.add_argument("--method", required=True, choices=harness.METHODS)
    f.add_argument("--train", required=True)
    f.add_argument("--val", help="validation CSV; defaults to the last 20%% of --train")
    f.add_argument("--model", help="data model id (needed for Hall-Yao bandwidth selection)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--params", type=_json_arg, default={}, help="JSON object of hyperparameters")
    f.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="score a pickled model against the true conditional law")
    e.add_argument("--fitted", required=True, help="pickle written by `fit`")
    e.add_argument("--test", required=True)
    e.add_argument("--model", required=True, help="data model id that generated --test")
    e.add_argument("--n-cond", type=int, default=2000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="optional JSON output path")

    b = sub.add_parser("bench", help="run the benchmark protocol")
    b.add_argument("--config", help="JSON RunConfig; command-line flags override its fields")
    b.add_argument("--model", help="model id, comma list or 'all'")
    b.add_argument("--methods", help="comma list of methods or 'all'")
    b.add_argument("--scale", type=float, dest="scale_factor")
    b.add_argument("--runs", type=int)
    b.add_argument("--seed", type=int, dest="base_seed")
    b.add_argument("--out", default="results")
    b.add_argument("--quiet", action="store_true")

    r = sub.add_parser("report", help="rebuild results.csv and results.md from runs.csv")
    r.add_argument("--runs-csv", required=True)
    r.add_argument("--out", default="results")
    r.add_argument("--scale", type=float, default=None)
    return ap


def _cmd_generate(args):
    if args.density_grid:
        header, rows = harness.density_grid_rows(args.model, args.points, args.seed)
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        print(f"wrote {len(rows)} density rows to {args.out}")
        return EXIT_OK
    data = datagen.generate(args.model, args.n, args.seed)
    data.to_csv(args.out)
    print(f"wrote {data.n} rows (p={data.p}, q={data.q}) to {args.out}")
    return EXIT_OK


def _cmd_fit(args):
    train = datagen.Dataset.from_csv(args.train, model=args.model)
    if args.val:
        val = datagen.Dataset.from_csv(args.val, model=args.model)
    else:
        cut = max(1, int(round(0.8 * train.n)))
        train, val = train.subset(slice(0, cut)), train.subset(slice(cut, train.n))
    params = dict(harness.DEFAULT_HYPERPARAMETERS.get(args.method, {}))
    params.update(args.params)
    t0 = time.perf_counter()
    fitted = harness.FITTERS[args.method](train, val, args.seed, **params)
    elapsed = time.perf_counter() - t0
    with open(args.out, "wb") as fh:
        pickle.dump({"method": args.method, "p": train.p, "q": train.q, "model": fitted}, fh)
    print(f"fitted {args.method} on {train.n} rows in {elapsed:.2f}s -> {args.out}")
    return EXIT_OK


def _cmd_evaluate(args):
    with open(args.fitted, "rb") as fh:
        bundle = pickle.load(fh)
    test = datagen.Dataset.from_csv(args.test, model=args.model)
    dm = datagen.get_model(args.model)
    if test.p != dm.p or bundle["p"] != dm.p:
        raise ConfigurationError(f"{dm.name} has p={dm.p}; test file has {test.p}, model was fit with {bundle['p']}")
    t0 = time.perf_counter()
    samples = bundle["model"].sample_batch(test.x, args.n_cond, args.seed)
    sample_time = time.perf_counter() - t0
    mm, ms, w1 = harness.evaluate_samples(dm.name, test.x, samples, args.seed + 1)
    result = {"method": bundle["method"], "model": dm.name, "n_test": test.n, "n_cond": args.n_cond,
              "mse_mean": mm, "mse_sd": ms, "w1": w1, "sample_time_s": sample_time}
    text = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_bench(args):
    data = {}
    if args.config:
        cfg = harness.RunConfig.from_json(args.config)
        data = cfg.to_dict()
    for key in ("model", "methods", "scale_factor", "runs", "base_seed"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    config = harness.RunConfig.from_dict(data)

    def progress(row):
        if args.quiet:
            return
        if row.ok:
            m = row.metrics
            print(f"{row.model:>4} {row.method:<9} run {row.run}: w1={m.w1:.4f} "
                  f"mse_mean={m.mse_mean:.4f} fit={m.train_time_s:.1f}s sample={m.sample_time_s:.1f}s",
                  flush=True)
        else:
            print(f"{row.model:>4} {row.method:<9} run {row.run}: FAILED {row.failure}", flush=True)

    table = harness.run_experiment(config, progress)
    out = harness.write_reports(table, args.out, config)
    for model, method, why in table.skipped:
        print(f"skipped {model}/{method}: {why}")
    print(f"wrote {out / 'results.csv'} and {out / 'results.md'}")
    if table.failures:
        print(f"{len(table.failures)} run(s) failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_report(args):
    scale = 1.0 if args.scale is None else args.scale
    table = harness.read_runs_csv(args.runs_csv, scale)
    out = harness.write_reports(table, args.out)
    print(f"wrote {out / 'results.csv'} and {out / 'results.md'}")
    return EXIT_OK


COMMANDS = {
    "generate": _cmd_generate,
    "fit": _cmd_fit,
    "evaluate": _cmd_evaluate,
    "bench": _cmd_bench,
    "report": _cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

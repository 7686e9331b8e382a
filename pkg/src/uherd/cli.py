"""Command-line entry point ``uherd``.

Exit status: 0 on success, 1 for configuration or usage errors, 2 for
failures while running.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from uherd.config import ConfigError, ExperimentConfig, load_config
from uherd.core import PreconditionError
from uherd.coverage import BoundParams, error_bound
from uherd.data import DataFormatError, generate_blobs, generate_halfmoons, load_dataset, read_int_lines, write_dataset
from uherd.experiment import Experiment, delta_accuracy, emit_results, read_results, run_experiment
from uherd.kernel import KernelConfig, lipschitz_bound
from uherd.uncertainty import default_tau_grid, ece_table, select_temperature

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

_LABEL_FREE = {"random", "coreset", "maxherding"}


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.output or cfg.output
    if not out:
        raise ConfigError("no output path: set 'output' in the config or pass --output")
    seeds = args.seeds if args.seeds else [cfg.schedule.seed]
    records = []
    for seed in seeds:
        records.extend(run_experiment(cfg, seed))
    emit_results(records, out)
    print(out)
    return EXIT_OK


def _cmd_select(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.method:
        cfg.method = args.method
    cfg.schedule.budgets = [args.budget]
    cfg.validate()
    features, labels = load_dataset(args.features, args.labels)
    labeled = read_int_lines(args.labeled, "index") if args.labeled else np.array([], dtype=np.int64)
    if labeled.size and (labeled.min() < 0 or labeled.max() >= features.rows):
        raise ConfigError(f"labeled indices must lie in [0, {features.rows})")
    if labels is None:
        label_free = cfg.method in _LABEL_FREE or (cfg.method == "uherding" and cfg.uncertainty.measure == "constant")
        if not label_free:
            raise ConfigError(f"method {cfg.method!r} needs a label file")
        labels = np.zeros(features.rows, dtype=np.int64)
        if labeled.size == 0 and cfg.initial.strategy == "random_per_class":
            raise ConfigError("initial strategy 'random_per_class' needs a label file")
    exp = Experiment(cfg, args.seed, pool=(features, labels), labeled=labeled)
    picks, _, _ = exp.select(args.round, args.budget)
    sys.stdout.write("".join(f"{i}\n" for i in picks))
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    logits = np.atleast_2d(np.loadtxt(args.logits, delimiter=",", ndmin=2))
    labels = read_int_lines(args.labels)
    if labels.size != logits.shape[0]:
        raise DataFormatError(f"{args.logits} has {logits.shape[0]} rows but {args.labels} has {labels.size} labels")
    grid = default_tau_grid(args.tau_min, args.tau_max, args.tau_count)
    best = select_temperature(logits, labels, grid, args.bins)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["tau", "ece", "selected"])
    for tau, ece in ece_table(logits, labels, grid, args.bins):
        writer.writerow([repr(tau), repr(ece), int(tau == best)])
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    if args.kind == "halfmoons":
        feats, labels = generate_halfmoons(args.n, args.noise, args.seed)
    else:
        if not args.centers:
            raise ConfigError("--centers is required for blobs (e.g. '0,0;3,3')")
        centers = [[float(v) for v in c.split(",")] for c in args.centers.split(";")]
        feats, labels = generate_blobs(centers, args.per_center, args.std, args.seed)
    write_dataset(feats, labels, args.features_out, args.labels_out)
    return EXIT_OK


def _cmd_bound(args) -> int:
    lip = lipschitz_bound(KernelConfig(sigma=args.sigma))
    value = error_bound(BoundParams(args.budget, args.pool_size, args.dim, args.norm_bound, lip,
                                    args.u_max, args.delta))
    print(repr(value))
    return EXIT_OK


def _cmd_delta_acc(args) -> int:
    rows = delta_accuracy(read_results(args.method), read_results(args.random))
    fields = ["round", "labeled_size", "method", "seed", "test_accuracy", "random_accuracy", "delta_acc"]
    out = open(args.output, "w", encoding="utf-8", newline="") if args.output else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uherd", description="Uncertainty herding active learning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the acquisition loop from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="results CSV (overrides the config)")
    p.add_argument("--seeds", type=int, nargs="+", help="run once per seed, rows concatenated")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("select", help="select one batch for a given labeled set")
    p.add_argument("--features", required=True)
    p.add_argument("--labels")
    p.add_argument("--labeled", help="file with one labeled pool index per line")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--config")
    p.add_argument("--method")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--round", type=int, default=0, help="round index for seed derivation")
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("calibrate", help="ECE per temperature and the selected temperature")
    p.add_argument("--logits", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--tau-min", type=float, default=0.01)
    p.add_argument("--tau-max", type=float, default=100.0)
    p.add_argument("--tau-count", type=int, default=21)
    p.add_argument("--bins", type=int, default=15)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("gen-data", help="write a synthetic pool as CSV + label file")
    p.add_argument("--kind", choices=("halfmoons", "blobs"), required=True)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--centers")
    p.add_argument("--per-center", type=int, default=50)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--features-out", required=True)
    p.add_argument("--labels-out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("bound", help="uniform-convergence bound on the coverage estimate")
    p.add_argument("--budget", "-B", type=int, required=True)
    p.add_argument("--pool-size", "-N", type=int, required=True)
    p.add_argument("--dim", "-d", type=int, required=True)
    p.add_argument("--norm-bound", "-R", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--u-max", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.set_defaults(func=_cmd_bound)

    p = sub.add_parser("delta-acc", help="accuracy difference against a Random results file")
    p.add_argument("--method", required=True)
    p.add_argument("--random", required=True)
    p.add_argument("--output")
    p.set_defaults(func=_cmd_delta_acc)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"uherd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PreconditionError, ValueError, OSError) as exc:
        print(f"uherd: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

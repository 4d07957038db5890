"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import posterior, qrf
from .config import RunConfig, load_config
from .evaluation import SWEEP_AXES, run_benchmark, simulate_tables, sweep, write_oob_curve
from .forest import Forest, ForestConfig, default_threads, train
from .reftable import TableError, read_csv, write_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

logger = logging.getLogger("abcf")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    data = cfg.model_dump()
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        data["output_dir"] = str(args.out)
    return RunConfig.model_validate(data).resolved()


def _threads(args) -> int:
    return args.threads if args.threads else default_threads()


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> None:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_table, test_table = simulate_tables(cfg)
    write_csv(train_table, out / "train.csv")
    write_csv(test_table, out / "test.csv")
    cfg.write_resolved(out)
    print(f"wrote {out / 'train.csv'} ({len(train_table)} x {train_table.n_stats} stats) and {out / 'test.csv'}")


def cmd_train(args) -> None:
    table = read_csv(args.table)
    if args.response not in table.param_names and not any(c in args.response for c in "/*:"):
        raise UsageError(f"response column {args.response!r} not found; table has {list(table.param_names)}")
    config = ForestConfig(args.trees, args.mtry, args.min_node_size, args.seed)
    try:
        forest = train(table, args.response, config, _threads(args))
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    forest.save(args.out)
    resolved = {"table": str(args.table), "response": args.response, "forest": config.__dict__}
    Path(args.out).with_suffix(".config.resolved.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out} ({forest.tree_count} trees, {forest.n_train} records)")


def _load_forest(path) -> Forest:
    try:
        return Forest.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read forest {path}: {exc}") from None


def _aligned_queries(forest: Forest, path) -> np.ndarray:
    table = read_csv(path)
    if table.stat_names != forest.stat_names:
        missing = [n for n in forest.stat_names if n not in table.stat_names]
        extra = [n for n in table.stat_names if n not in forest.stat_names]
        if missing or extra:
            raise DataError(f"query statistics differ from training: missing {missing}, unexpected {extra}")
        # same names, different order
        return np.column_stack([table.stat(n) for n in forest.stat_names])
    return table.stats


def cmd_predict(args) -> None:
    forest = _load_forest(args.forest)
    X = _aligned_queries(forest, args.queries)
    alphas = args.quantiles
    W = forest.weights_matrix(X)
    tau = forest.responses
    if args.variance_method == "oob":
        oob = posterior.oob_predict(forest)
        var = [posterior.variance_oob_weighted(w, tau, oob) for w in W]
    elif args.variance_method == "cdf":
        var = [posterior.variance_cdf(w, tau) for w in W]
    else:
        rf2 = posterior.fit_residual_forest(forest, threads=_threads(args))
        var = list(rf2.weights_matrix(X) @ rf2.responses)
        if min(var) < 0:
            raise ArithmeticError("negative residual-forest variance")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query", "expectation", f"variance_{args.variance_method}"] + [f"q{a:g}" for a in alphas])
        for i, row in enumerate(W):
            s = qrf.summarize(row, tau, alphas, variance=var[i])
            w.writerow([i, repr(s.mean), repr(s.variance)] + [repr(s.quantiles[a]) for a in alphas])
    if args.export_weights:
        d = Path(args.export_weights)
        d.mkdir(parents=True, exist_ok=True)
        for i, row in enumerate(W):
            qrf.write_weighted_sample(d / f"weights_{i}.csv", row, tau)
    print(f"wrote {out} ({len(W)} queries)")


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    report = run_benchmark(cfg, output_dir=cfg.output_dir, threads=_threads(args))
    for r in report.failures():
        print(f"method {r.method} failed: {r.target}", file=sys.stderr)
    print(f"wrote {Path(cfg.output_dir) / 'report.csv'}")
    if report.failures():
        raise ArithmeticError("some methods failed; see report.csv")


def cmd_sweep(args) -> None:
    cfg = _config(args)
    result = sweep(cfg, args.axis, args.values, threads=_threads(args))
    result.write(cfg.output_dir)
    cfg.write_resolved(cfg.output_dir)
    print(f"wrote {Path(cfg.output_dir) / f'sweep_{args.axis}.csv'}")


def _forest_from_args(args) -> Forest:
    if args.forest:
        return _load_forest(args.forest)
    if not (args.table and args.response):
        raise UsageError("give --forest, or --table and --response")
    table = read_csv(args.table)
    if args.response not in table.param_names:
        raise UsageError(f"response column {args.response!r} not found; table has {list(table.param_names)}")
    return train(table, args.response, ForestConfig(args.trees, args.mtry, args.min_node_size, args.seed), _threads(args))


def cmd_importance(args) -> None:
    forest = _forest_from_args(args)
    report = posterior.variable_importance(forest)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(args.out)
    print(f"wrote {args.out}")


def cmd_oob_curve(args) -> None:
    forest = _forest_from_args(args)
    cps = args.checkpoints or [forest.tree_count]
    if max(cps) > forest.tree_count or min(cps) < 1:
        raise UsageError(f"checkpoints must lie in [1, {forest.tree_count}]")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_oob_curve(args.out, posterior.oob_mse_curve(forest, cps))
    print(f"wrote {args.out}")


# ---------------------------------------------------------------------------
# parser


def _add_forest_flags(p) -> None:
    p.add_argument("--trees", type=int, default=500)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--min-node-size", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abcf", description="Random-forest ABC parameter inference.")
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: ABCF_THREADS or all cores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, helptext in (
        ("simulate", cmd_simulate, "simulate train.csv and test.csv"),
        ("evaluate", cmd_evaluate, "run a benchmark and write report.csv / report.json"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path)
        p.set_defaults(func=fn)

    p = sub.add_parser("sweep", help="sweep one hyperparameter")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", type=_int_list, required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="fit a forest on a reference table")
    p.add_argument("--table", type=Path, required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_forest_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="posterior summaries for query rows")
    p.add_argument("--forest", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--quantiles", type=_float_list, default=[0.025, 0.05, 0.95, 0.975])
    p.add_argument("--variance-method", choices=posterior.VARIANCE_METHODS, default="oob")
    p.add_argument("--export-weights", type=Path, metavar="DIR")
    p.set_defaults(func=cmd_predict)

    for name, fn in (("importance", cmd_importance), ("oob-curve", cmd_oob_curve)):
        p = sub.add_parser(name)
        p.add_argument("--forest", type=Path)
        p.add_argument("--table", type=Path)
        p.add_argument("--response")
        p.add_argument("--out", type=Path, required=True)
        _add_forest_flags(p)
        if name == "oob-curve":
            p.add_argument("--checkpoints", type=_int_list)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        args.func(args)
    except (UsageError, ValidationError) as exc:
        print(f"abcf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TableError, FileNotFoundError, KeyError) as exc:
        print(f"abcf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"abcf: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"abcf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

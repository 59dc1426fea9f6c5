"""``tbvcm`` command line: fit, predict, coef, simulate, cv, bench.

Exit codes: 0 ok, 2 usage, 3 data, 4 numeric.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import boost
from .core import Scheme, Task
from .data import generators, io, serialize
from .errors import DataError, NumericError, UsageError
from .eval import benchmark, format_reports, write_reports
from .tree import STRATEGIES, TreeConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

TASKS = {"reg": Task.REGRESSION, "logit": Task.CLASSIFICATION}


def _names(text: str | None) -> list[str]:
    if not text:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def _auto_int(text: str) -> int | str:
    if text == "auto":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'auto', got {text!r}") from None


def _auto_float(text: str) -> float | str:
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def _add_data_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("data")
    g.add_argument("--data", required=True, help="input CSV with a header row")
    g.add_argument("--y", required=True, help="response column")
    g.add_argument("--z", required=True, help="comma separated action columns")
    g.add_argument("--x", default="", help="comma separated predictive columns (intercept is implicit)")
    g.add_argument("--task", choices=sorted(TASKS), default="reg",
                   help="reg: squared error, identity link; logit: logistic deviance")
    g.add_argument("--categorical", default="", help="action columns to treat as categorical")
    g.add_argument("--scale", choices=("standardized", "raw"), default="standardized",
                   help="map predictive columns to [-1, 1] before fitting (default) or keep raw units")


def _add_boost_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("boosting")
    g.add_argument("--trees", type=_auto_int, default=100, help="iterations B, or auto = ceil(4 ln n)")
    g.add_argument("--depth", type=int, default=5, help="maximum tree depth")
    g.add_argument("--min-leaf", type=_auto_int, default=20,
                   help="minimum rows per leaf, or auto = ceil(n^0.8)")
    g.add_argument("--rate", type=_auto_float, default="auto", help="learning rate, auto = 1/(1+p)")
    g.add_argument("--scheme", choices=[s.value for s in Scheme], default="simultaneous")
    g.add_argument("--strategy", choices=STRATEGIES, default=None,
                   help="tree growing strategy (boulevard defaults to subsampled)")
    g.add_argument("--subsample", type=float, default=0.5, help="per-tree subsample fraction q")
    g.add_argument("--truncation", type=float, default=None, help="boulevard clip level M")
    g.add_argument("--init", choices=("zeros", "glm"), default="zeros", help="starting coefficients")
    g.add_argument("--holdout", type=float, default=None, help="early stopping holdout fraction")
    g.add_argument("--patience", type=int, default=10, help="early stopping patience")
    g.add_argument("--unseen", choices=("majority", "strict"), default="majority",
                   help="routing of categorical levels not seen in training")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tbvcm", description="Tree boosted varying coefficient models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("fit", help="fit a model and write it as JSON")
    _add_data_flags(p)
    _add_boost_flags(p)
    p.add_argument("--out", required=True, help="model document to write")
    p.add_argument("--trace", default=None, help="fit trace CSV (default: <out>.trace.csv)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict responses for the rows of a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="predictions CSV")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("coef", help="export fitted coefficients over a grid or the rows of a CSV")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--grid", help="e.g. z1=0:1:0.1,z2=0:1:0.1 (categorical: z=a|b)")
    src.add_argument("--data", help="CSV holding the action columns")
    p.add_argument("--scale", choices=("raw", "standardized"), default="raw",
                   help="coefficients for raw predictive units (default) or the fitted scale")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_coef)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--gen", required=True, help="one of: " + ", ".join(sorted(generators.GENERATORS)))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth", action="store_true", help="append beta_true_* columns")
    p.add_argument("--literal", action="store_true",
                   help="vcm2d-logit only: use exp of the linear term as the logit")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    for name, methods, text in (("cv", "tvcm", "k-fold cross validation"),
                                ("bench", "tvcm,lm,lms,gbm", "compare methods under one CV split")):
        p = sub.add_parser(name, help=text)
        _add_data_flags(p)
        _add_boost_flags(p)
        p.add_argument("--folds", type=int, default=10)
        p.add_argument("--methods", default=methods, help=f"comma separated subset of tvcm,lm,lms,gbm "
                                                          f"(default {methods})")
        p.add_argument("--out", default=None, help="optional CSV report")
        p.set_defaults(func=cmd_cv)
    return parser


def _load(args):
    specs = io.column_specs(args.y, _names(args.z), _names(args.x))
    return io.load_csv(args.data, specs, TASKS[args.task], categorical=_names(args.categorical),
                       standardize=args.scale == "standardized")


def _fit_config(args, n: int) -> boost.FitConfig:
    trees = math.ceil(4 * math.log(n)) if args.trees == "auto" else args.trees
    min_leaf = math.ceil(n ** 0.8) if args.min_leaf == "auto" else args.min_leaf
    scheme = Scheme(args.scheme)
    strategy = args.strategy or ("subsampled" if scheme is Scheme.BOULEVARD else "cart")
    tree = TreeConfig(max_depth=args.depth, min_leaf=min_leaf, strategy=strategy,
                      subsample=args.subsample if strategy == "subsampled" else 1.0)
    return boost.FitConfig(
        iterations=trees,
        rate=None if args.rate == "auto" else args.rate,
        tree=tree,
        scheme=scheme,
        truncation=args.truncation,
        subsample=args.subsample,
        seed=args.seed,
        init=args.init,
        holdout=args.holdout,
        patience=args.patience,
        threads=args.threads or os.cpu_count() or 1,
        unseen=args.unseen,
    )


def cmd_fit(args) -> int:
    data = _load(args)
    cfg = _fit_config(args, data.n)
    model, trace = boost.fit(data, cfg)
    serialize.save_model(model, args.out)
    trace_path = args.trace or str(Path(args.out).with_suffix("")) + ".trace.csv"
    trace.to_csv(trace_path)
    final = trace.train_loss[-1] if len(trace) else trace.initial_loss
    print(f"final training loss: {final:.6g}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = serialize.load_model(args.model)
    x, z, _, _ = io.read_for_model(args.data, model)
    pred = np.atleast_1d(model.predict(x, z))
    io.write_csv(args.out, ["row", "prediction"], [[i + 1, float(v)] for i, v in enumerate(pred)])
    return EXIT_OK


def cmd_coef(args) -> int:
    model = serialize.load_model(args.model)
    if args.grid is not None:
        z = io.parse_grid(args.grid, model.schema)
    else:
        z = io.read_action_rows(args.data, model.schema)
    io.export_coefficients(model, z, args.out, raw=args.scale == "raw")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = generators.GeneratorSpec(args.gen, args.n, args.seed, literal=args.literal)
    io.save_dataset(spec.generate(), args.out, truth=args.truth)
    return EXIT_OK


def cmd_cv(args) -> int:
    methods = _names(args.methods)
    unknown = [m for m in methods if m not in ("tvcm", "lm", "lms", "gbm")]
    if not methods or unknown:
        raise UsageError(f"unknown methods {unknown}; choose from tvcm, lm, lms, gbm")
    data = _load(args)
    if args.folds < 2 or args.folds > data.n:
        raise UsageError(f"--folds must lie in [2, {data.n}]")
    n_train = data.n - math.ceil(data.n / args.folds)
    cfg = _fit_config(args, n_train)
    reports = benchmark(data, cfg, args.folds, args.seed, methods)
    print(format_reports(reports))
    if args.out:
        write_reports(reports, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tbvcm {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"tbvcm {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"tbvcm {args.command}: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"tbvcm {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

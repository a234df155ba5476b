"""Command-line interface: ``bwkm {cluster,bench,gen,validate}``.

Exit codes: 0 success, 2 bad flags, 3 I/O failure, 4 data or guard violation.
A ``--config`` file (INI style, any section names) supplies defaults for the
same keys as the long flags, with dashes or underscores; flags win.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .algorithm import BudgetExhausted, StopRule
from .bench import (BUDGET_POLICIES, METHODS, ExperimentConfig, MethodParams, format_summary,
                    run_experiment, summarize, synthesize_mixture)
from .data import DataError, load_csv, save_csv, validate_csv
from .records import write_records
from .seeding import make_rng

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("bwkm")


class UsageError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0 or math.isinf(v):
        raise argparse.ArgumentTypeError(f"must be a finite value >= 0, got {text}")
    return v


def _int_list(text):
    try:
        vals = [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return vals


def _str_list(text):
    vals = [t for t in text.replace(",", " ").split() if t]
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one name")
    return vals


def _method(text):
    base = text.split("-")[0] if text.startswith("minibatch") else text
    if base != "minibatch" and text not in METHODS:
        raise argparse.ArgumentTypeError(f"unknown method {text!r}; expected one of {METHODS}")
    if text.startswith("minibatch-"):
        _positive_int(text.split("-", 1)[1])
    return text


def _add_common(p):
    p.add_argument("--config", help="INI file with default values for any long flag")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output path")
    p.add_argument("--test-mode", action="store_true",
                   help="record the exact full-data error on every row")
    p.add_argument("--timing", action="store_true",
                   help="store wall-clock times (outputs are then not byte-reproducible)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_method_params(p):
    g = p.add_argument_group("method parameters")
    g.add_argument("--stop", action="append", metavar="RULE",
                   help="BWKM stop criterion, repeatable: budget:X | boundary | shift:EPS | "
                        "bound:T | iters:N")
    g.add_argument("--m", type=_positive_int, help="BWKM initial partition size")
    g.add_argument("--m-prime", type=_positive_int, help="BWKM starting partition size")
    g.add_argument("--s", type=_positive_int, help="BWKM subsample size")
    g.add_argument("--r", type=_positive_int, default=5, help="BWKM subsample repetitions")
    g.add_argument("--b", type=_positive_int, default=100, help="mini-batch size")
    g.add_argument("--mb-iterations", type=_positive_int, default=100,
                   help="mini-batch iterations")
    g.add_argument("--chain", type=_positive_int, default=200, help="KMC2 chain length")
    g.add_argument("--eps", type=_nonneg_float,
                   help="Lloyd tolerance on consecutive errors (default relative)")
    g.add_argument("--grid-iters", type=_positive_int, default=6, help="grid-RPKM levels")
    g.add_argument("--max-iter", type=_positive_int, default=300,
                   help="Lloyd iteration cap for the full-data baselines")


def _add_gen_params(p):
    p.add_argument("--n", type=_positive_int, default=1000)
    p.add_argument("--d", type=_positive_int, default=2)
    p.add_argument("--k-true", type=_positive_int, default=3)
    p.add_argument("--separation", type=_nonneg_float, default=50.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bwkm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="run one method on one dataset")
    _add_common(p)
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--k", type=_positive_int, help="number of clusters")
    p.add_argument("--method", type=_method, default="bwkm")
    _add_method_params(p)
    p.set_defaults(out="bwkm-out")

    p = sub.add_parser("bench", help="run every method on every (dataset, K, repetition)")
    _add_common(p)
    p.add_argument("--data", action="append",
                   help="dataset CSV, repeatable; a synthetic mixture is used when absent")
    p.add_argument("--ks", type=_int_list, default=[3, 9, 27])
    p.add_argument("--reps", type=_positive_int, default=40)
    p.add_argument("--methods", type=_str_list)
    p.add_argument("--budget-policy", choices=BUDGET_POLICIES, default="min-of-baselines")
    p.add_argument("--budget", type=float)
    p.add_argument("--jobs", type=_positive_int, default=1)
    _add_method_params(p)
    _add_gen_params(p)
    p.set_defaults(out="bench-out")

    p = sub.add_parser("gen", help="write a synthetic Gaussian mixture")
    _add_common(p)
    _add_gen_params(p)
    p.set_defaults(out="mixture.csv")

    p = sub.add_parser("validate", help="check a dataset CSV")
    _add_common(p)
    p.add_argument("--data", help="dataset CSV")
    return parser


# -- config file --------------------------------------------------------------

def _config_defaults(sp: argparse.ArgumentParser, path: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise OSError(f"cannot read --config {path}: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise UsageError(f"--config {path}: {exc}") from exc
    actions = {a.dest: a for a in sp._actions if a.option_strings}
    out = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            dest = key.strip().replace("-", "_")
            action = actions.get(dest)
            if action is None or dest in ("config", "help"):
                raise UsageError(f"--config {path}: unknown key {key!r} in [{section}]")
            try:
                out[dest] = _convert(action, raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"--config {path}: bad value for {key!r}: {exc}") from exc
    return out


def _convert(action, raw: str):
    raw = raw.strip()
    if isinstance(action, argparse._StoreTrueAction):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(action, argparse._CountAction):
        return int(raw)
    conv = action.type or str
    if isinstance(action, argparse._AppendAction):
        return [conv(t) for t in raw.replace(",", " ").split()]
    val = conv(raw)
    if action.choices is not None and val not in action.choices:
        raise ValueError(f"{val!r} not in {tuple(action.choices)}")
    return val


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sp = parser._subparsers._group_actions[0].choices[args.command]
        try:
            sp.set_defaults(**_config_defaults(sp, args.config))
        except UsageError as exc:
            sp.error(str(exc))
        args = parser.parse_args(argv)
    return parser, args


# -- subcommands ----------------------------------------------------------------

def _params(args) -> MethodParams:
    stop = tuple(args.stop or ())
    if stop:
        try:
            StopRule.parse(stop)
        except ValueError as exc:
            raise UsageError(f"--stop: {exc}") from exc
    return MethodParams(m=args.m, m_prime=args.m_prime, s=args.s, r=args.r, stop=stop, b=args.b,
                        mb_iterations=args.mb_iterations, chain=args.chain, eps=args.eps,
                        grid_iters=args.grid_iters, lloyd_max_iter=args.max_iter)


def _load(path: str | None) -> np.ndarray:
    if not path:
        raise UsageError("--data is required")
    return load_csv(path)


def cmd_cluster(args) -> int:
    from .bench import run_method

    if args.k is None:
        raise UsageError("--k is required")
    params = _params(args)
    X = _load(args.data)
    name = Path(args.data).stem
    C, record = run_method(args.method, X, args.k, args.seed, params, dataset=name,
                           test_mode=args.test_mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(out / "centroids.csv", C)
    write_records([record], out / "trial.jsonl", include_timing=args.timing)
    print(f"{record.method}: K={args.k} error={record.final_error:.10g} "
          f"distances={record.distances} stop={record.stop_reason} -> {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    params = _params(args)
    if args.data:
        datasets = {Path(p).stem: _load(p) for p in args.data}
    else:
        X, _, _ = synthesize_mixture(args.n, args.d, args.k_true, args.separation,
                                     make_rng(args.seed, (0,)))
        datasets = {f"mixture-n{args.n}-d{args.d}-k{args.k_true}": X}
    kw = {}
    if args.methods:
        for m in args.methods:
            try:
                _method(m)
            except argparse.ArgumentTypeError as exc:
                raise UsageError(f"--methods: {exc}") from exc
        kw["methods"] = tuple(args.methods)
    try:
        config = ExperimentConfig(ks=tuple(args.ks), repetitions=args.reps, params=params,
                                  budget_policy=args.budget_policy, budget=args.budget,
                                  seed=args.seed, test_mode=args.test_mode, jobs=args.jobs,
                                  timing=args.timing, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config.output = str(out / "results.jsonl")
    records = run_experiment(config, datasets)
    table = format_summary(summarize(records))
    (out / "summary.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_gen(args) -> int:
    X, _, _ = synthesize_mixture(args.n, args.d, args.k_true, args.separation,
                                 make_rng(args.seed, (0,)))
    path = Path(args.out)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    save_csv(path, X)
    print(f"wrote n={args.n} d={args.d} to {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    if not args.data:
        raise UsageError("--data is required")
    report = validate_csv(args.data)
    print(f"n={report.n} d={report.d if report.d is not None else 0} "
          f"header={'yes' if report.header else 'no'} violations={len(report.violations)}")
    for v in report.violations:
        print(f"  {v}")
    return EXIT_OK if report.ok else EXIT_DATA


COMMANDS = {"cluster": cmd_cluster, "bench": cmd_bench, "gen": cmd_gen,
            "validate": cmd_validate}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        parser, args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bwkm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"bwkm {args.command}: invalid data in {args.data}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"bwkm {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, BudgetExhausted) as exc:
        print(f"bwkm {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

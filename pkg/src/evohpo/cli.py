"""Command-line entry point: ``evohpo run|pbt|export-schedule|gradcheck|report``.

Exit codes: 0 on success, 1 when the run itself fails (checkpoint or I/O
errors, a failed gradient check), 2 for unusable configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from evohpo.orchestrator import (PBT, SCHEDULE, SYSTEMIC_ERRORS, TRADITIONAL, ConfigError,
                                 Experiment, load_experiment, load_run, run, write_schedule)
from evohpo.reporting import write_report
from evohpo.space import CONFIG_DIR, SpaceError
from evohpo.trainer import TrainHparams, gradient_check, init_model, make_dataset

log = logging.getLogger("evohpo")

EXPERIMENT_DIR = CONFIG_DIR / "experiments"
GRADCHECK_TOLERANCE = 1e-4


def resolve_experiment(ref: str) -> Experiment:
    """Load an experiment from a path or a bundled name such as ``sphere``."""
    path = Path(ref)
    if not path.exists():
        bundled = EXPERIMENT_DIR / f"{ref}.yaml"
        if not bundled.exists():
            raise FileNotFoundError(f"no experiment file or bundled experiment named {ref!r}")
        path = bundled
    return load_experiment(path)


def _run(args: argparse.Namespace, mode: str) -> int:
    exp = resolve_experiment(args.config)
    if exp.config.mode != mode:
        other = "pbt" if exp.config.mode == PBT else "run"
        raise ConfigError(f"{args.config} is a {exp.config.mode} experiment; use `evohpo {other}`")
    config = exp.config if args.seed is None else replace(exp.config, seed=args.seed)
    if args.generations is not None:
        field = "epochs" if mode == PBT else "generations"
        config = replace(config, **{field: args.generations})
    out = Path(args.out) if args.out else exp.output_dir
    parallelism = args.parallelism or exp.parallelism
    result = run(config, exp.space, out_dir=out, parallelism=parallelism)
    best = result.best_individual
    print(f"generations: {len(result.history)}")
    print(f"best fom: {best.fom!r}")
    for name, value in exp.space.decode(best.genotype).items():
        print(f"  {name} = {value}")
    if out is not None:
        print(f"output: {out}")
    return 0


def cmd_export_schedule(args: argparse.Namespace) -> int:
    result = load_run(args.run_dir)
    path = write_schedule(result, args.out or Path(args.run_dir) / SCHEDULE)
    print(path.read_text(), end="")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    sizes = [int(x) for x in args.layers.split(",")]
    data = make_dataset(args.seed, 200, "blobs", n_classes=sizes[-1])
    if sizes[0] != data.n_features:
        raise ConfigError(f"input width must be {data.n_features} for the gradient-check data")
    model = init_model(sizes, args.seed)
    err = gradient_check(model, data, TrainHparams(weight_decay=args.weight_decay),
                         n_params=args.n_params, rng=np.random.default_rng(args.seed))
    ok = err < GRADCHECK_TOLERANCE
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAILED'}, tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


def cmd_report(args: argparse.Namespace) -> int:
    for path in write_report(args.run_dir, args.baseline_budget, args.parallelism or 1):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evohpo", description="Evolutionary hyperparameter search and PBT")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    for name, mode, helptext in (("run", TRADITIONAL, "traditional GA search"),
                                 ("pbt", PBT, "population based training")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", help="experiment YAML file or bundled experiment name")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--parallelism", type=int, default=None)
        s.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        s.add_argument("--generations", type=int, default=None,
                       help="override generations (epochs for pbt)")
        s.set_defaults(func=lambda a, m=mode: _run(a, m))

    s = sub.add_parser("export-schedule", help="write the best lineage's hyperparameter schedule")
    s.add_argument("run_dir")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_export_schedule)

    s = sub.add_parser("gradcheck", help="compare backprop against finite differences")
    s.add_argument("--layers", default="2,16,16,3", help="comma-separated layer sizes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-params", type=int, default=50)
    s.add_argument("--weight-decay", type=float, default=0.0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("report", help="write summary.csv (and baseline.csv) for a run")
    s.add_argument("run_dir")
    s.add_argument("--baseline-budget", type=int, default=None)
    s.add_argument("--parallelism", type=int, default=None)
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpaceError, FileNotFoundError, ValueError) as exc:
        print(f"evohpo: error: {exc}", file=sys.stderr)
        return 2
    except SYSTEMIC_ERRORS as exc:
        print(f"evohpo: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

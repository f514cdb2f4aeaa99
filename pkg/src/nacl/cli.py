"""Command line entry point: ``nacl run|preset|report``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import SpecError, ablation_presets, load_spec, override, report, run_experiment


def _add_overrides(p):
    p.add_argument("--seed", type=int, help="seed for data generation and initialisation (all runs)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--train-fraction", type=float, help="fraction of the training images to use")
    p.add_argument("--jobs", type=int, default=1, help="runs to execute in parallel processes")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--n-test", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nacl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute an experiment spec file (YAML or JSON)")
    p.add_argument("spec")
    p.add_argument("--out", help="override the spec file's output_dir")
    _add_overrides(p)

    p = sub.add_parser("preset", help="execute a named preset")
    p.add_argument("name")
    p.add_argument("--out", help="output directory (default results/<name>)")
    _add_overrides(p)

    p = sub.add_parser("report", help="rebuild comparison tables for a results directory")
    p.add_argument("dir")
    return parser


def _apply(spec, args):
    if args.out:
        spec.output_dir = args.out
    return override(spec, seed=args.seed, epochs=args.epochs, train_fraction=args.train_fraction,
                    n_train=args.n_train, n_val=args.n_val, n_test=args.n_test)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            problems = report(args.dir)
            for p in problems:
                print(f"warning: {p}", file=sys.stderr)
            return 0
        if args.command == "run":
            spec = load_spec(args.spec)
        else:
            spec = ablation_presets(args.name, args.out)
        spec = _apply(spec, args)
        return run_experiment(spec, jobs=args.jobs)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:  # override values outside their domain
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

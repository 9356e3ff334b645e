"""Command-line entry point: ``stvsa <subcommand> [--config PATH] [--seed N] [--out DIR] [--strict]``.

Exit codes: 0 success, 1 validation error, 2 numeric fault, 3 a sweep row failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline, report
from .config import ExperimentConfig, apply_overrides, load_config
from .errors import NumericFault, StvsaError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_SWEEP = 0, 1, 2, 3

log = logging.getLogger("stvsa")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="INI experiment config")
    p.add_argument("--seed", type=int, help="overrides [global] seed")
    p.add_argument("--out", type=Path, default=Path("run"), help="run directory (default: ./run)")
    p.add_argument("--strict", action="store_true", help="treat warnings as validation errors")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stvsa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="simulate the scenario grid and write the dataset")
    _common(p)
    p.add_argument("--ratio", help="impose stable:unstable ratio, e.g. 100:1")
    p = sub.add_parser("label", help="SFCM labels, silhouette report and train/test split")
    _common(p)
    p = sub.add_parser("balance", help="normalise and oversample the training split")
    _common(p)
    p.add_argument("--method", help="cwgan_gp, ros, smote, adasyn or none")
    p.add_argument("--split", default="train", help=argparse.SUPPRESS)
    p = sub.add_parser("train", help="train the classifier on the balanced set")
    _common(p)
    p = sub.add_parser("evaluate", help="score the checkpoint on the test split")
    _common(p)
    p.add_argument("--snr", help="measurement SNR in dB, or 'none'")
    p.add_argument("--source", type=Path, help="directory with the trained artifacts (default: --out)")
    p = sub.add_parser("sweep", help="one pipeline run per axis value")
    _common(p)
    p.add_argument("--axis", required=True, choices=sorted(pipeline.AXES))
    p.add_argument("--values", required=True, help="comma separated, e.g. 5:1,10:1,50:1")
    p.add_argument("--seeds", help="comma separated seeds (default: the config seed)")
    p = sub.add_parser("report", help="render figures and a run index from an output directory")
    _common(p)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    if getattr(args, "ratio", None):
        cfg = cfg.with_overrides(dataset={"ratio": args.ratio})
    if getattr(args, "method", None):
        cfg = cfg.with_overrides(balancing={"method": args.method})
    if getattr(args, "snr", None):
        cfg = cfg.with_overrides(dataset={"snr_db": pipeline._parse_snr(args.snr)})
    return cfg.validate()


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=pipeline._json_default))


def run(args) -> int:
    cfg = _config(args)
    out = args.out
    if args.command == "simulate":
        _emit(pipeline.cmd_simulate(cfg, out, strict=args.strict))
    elif args.command == "label":
        _emit(pipeline.cmd_label(cfg, out))
    elif args.command == "balance":
        _emit(pipeline.cmd_balance(cfg, out, split=args.split))
    elif args.command == "train":
        _emit(pipeline.cmd_train(cfg, out))
    elif args.command == "evaluate":
        _emit(pipeline.cmd_evaluate(cfg, out, source=args.source).to_dict())
    elif args.command == "sweep":
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
        result = pipeline.cmd_sweep(cfg, out, args.axis, values, seeds, strict=args.strict)
        _emit({"table": str(result.table), "summary": result.summary, "failed": result.failed})
        if result.failed:
            return EXIT_SWEEP
    elif args.command == "report":
        _emit([str(p) for p in report.render(out)])
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (NumericFault, ArithmeticError) as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (StvsaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point.

    ier synth       --config cfg.json --out DATA_DIR [--seed N]
    ier train       --config cfg.json --data DATA_DIR --stage {1,identifier,2} --out RUN_DIR
    ier eval        --config cfg.json --data DATA_DIR --ckpt FILE --out RUN_DIR
    ier ablate      --config cfg.json --data DATA_DIR --out RUN_DIR [--toggles ...]
    ier export-maps --config cfg.json --data DATA_DIR --ckpt FILE --out DIR

Exit codes: 0 ok, 2 usage, 3 I/O, 4 numeric failure.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import ablate as A
from . import pipeline
from .config import load_config
from .errors import (
    ConfigurationError,
    DomainError,
    FormatError,
    NumericError,
    UsageError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _add_common(sub, data=True, out=True, ckpt=False):
    sub.add_argument("--config", required=True, help="flat JSON config file")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    if data:
        sub.add_argument("--data", required=True, help="dataset directory")
    if out:
        sub.add_argument("--out", required=True, help="output directory")
    if ckpt:
        sub.add_argument("--ckpt", required=True, help="checkpoint file")


def build_parser():
    parser = argparse.ArgumentParser(prog="ier")
    subs = parser.add_subparsers(dest="command", required=True)

    synth = subs.add_parser("synth", help="generate a synthetic dataset")
    _add_common(synth, data=False)

    train = subs.add_parser("train", help="run one training stage")
    _add_common(train)
    train.add_argument("--stage", required=True,
                       choices=("1", "identifier", "2"))

    ev = subs.add_parser("eval", help="evaluate a checkpoint")
    _add_common(ev, ckpt=True)

    ab = subs.add_parser("ablate", help="run an ablation table")
    _add_common(ab)
    ab.add_argument("--toggles", default="silent_filter,offscreen_filter",
                    help="comma list: silent_filter,offscreen_filter,"
                         "identifier,threshold_mode")
    ab.add_argument("--ckpt", default=None,
                    help="checkpoint for identifier/threshold ablations")

    ex = subs.add_parser("export-maps", help="export per-class AV maps")
    _add_common(ex, ckpt=True)
    return parser


def _load_cfg(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def run(args):
    cfg = _load_cfg(args)
    if args.command == "synth":
        manifest = pipeline.synth_dataset(cfg, args.out)
        print(f"wrote {len(manifest['items'])} scenes to {args.out}")
        return EXIT_OK
    if args.command == "train":
        if args.stage == "1":
            path = pipeline.run_stage1(cfg, args.data, args.out)
        elif args.stage == "identifier":
            path = pipeline.run_identifier(cfg, args.data, args.out)
        else:
            path = pipeline.run_stage2(cfg, args.data, args.out)
        print(f"checkpoint written to {path}")
        return EXIT_OK
    if args.command == "eval":
        report, per_sample = pipeline.evaluate(cfg, args.ckpt, args.data)
        pipeline.write_report(report, per_sample, args.out, cfg.k_true)
        for key in sorted(report):
            print(f"{key}: {report[key]:.4f}")
        return EXIT_OK
    if args.command == "ablate":
        toggles = {t.strip() for t in args.toggles.split(",") if t.strip()}
        unknown = toggles - {"silent_filter", "offscreen_filter",
                             "identifier", "threshold_mode"}
        if unknown:
            raise UsageError(f"unknown toggles: {sorted(unknown)}")
        out = Path(args.out)
        if {"silent_filter", "offscreen_filter"} & toggles:
            header, rows = A.ablate_filters(cfg, args.data, args.out)
            A.write_table(out / "ablate_filters.csv", header, rows)
            print(f"filter ablation: {len(rows)} rows")
        if "identifier" in toggles:
            if not args.ckpt:
                raise UsageError("identifier ablation needs --ckpt")
            header, rows = A.ablate_identifier(cfg, args.ckpt, args.data)
            A.write_table(out / "ablate_identifier.csv", header, rows)
            print(f"identifier ablation: {len(rows)} rows")
        if "threshold_mode" in toggles:
            if not args.ckpt:
                raise UsageError("threshold ablation needs --ckpt")
            header, rows = A.ablate_threshold_modes(cfg, args.ckpt, args.data)
            A.write_table(out / "ablate_thresholds.csv", header, rows)
            print(f"threshold ablation: {len(rows)} rows")
        return EXIT_OK
    if args.command == "export-maps":
        count = pipeline.export_maps(cfg, args.ckpt, args.data, args.out)
        print(f"exported maps for {count} scenes to {args.out}")
        return EXIT_OK
    raise UsageError(f"unknown command {args.command}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DomainError, NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

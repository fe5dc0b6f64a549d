"""Command-line entry point.

    xlsent run-all --config pipeline.json
    xlsent run --config pipeline.json --stage align --seed 3
    xlsent pca --config pipeline.json
    xlsent evaluate --pred predictions.jsonl --gold gold.txt --out-dir report/

Exit codes: 0 success, 2 missing input, 3 validation failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from xlsent import corpus_eval as ce
from xlsent.errors import DataFormatError, NumericalError
from xlsent.pipeline import STAGES, ConfigError, Pipeline, PipelineConfig, read_labels, write_eval_outputs

logger = logging.getLogger("xlsent")

EXIT_MISSING = 2
EXIT_INVALID = 3
EXIT_NUMERIC = 4


def _add_common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="pipeline config (JSON)")
    p.add_argument("--seed", type=int, help="override the config's global seed")
    p.add_argument("--out-dir", help="override the config's output directory")
    p.add_argument("--force", action="store_true", help="rerun even when outputs are up to date")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="xlsent", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run-all", help="run every stage in order, skipping up-to-date ones")
    _add_common(p)
    p = sub.add_parser("run", help="run one stage (or all without --stage)")
    _add_common(p)
    p.add_argument("--stage", choices=STAGES)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        _add_common(p, config_required=stage != "evaluate")
        if stage == "evaluate":
            p.add_argument("--pred", help="predictions: one label per line or JSON lines")
            p.add_argument("--gold", help="gold labels, same format")
            p.add_argument("--name", default="test", help="row name in the report table")
    return parser


def _evaluate_files(args):
    if not (args.pred and args.gold and args.out_dir):
        raise ConfigError("evaluate without --config needs --pred, --gold and --out-dir")
    report = ce.evaluate(read_labels(args.pred), read_labels(args.gold))
    write_eval_outputs({args.name: report}, Path(args.out_dir))
    print(ce.format_row(report))


def run(args) -> int:
    if args.command == "evaluate" and not args.config:
        _evaluate_files(args)
        return 0
    cfg = PipelineConfig.load(args.config, seed=args.seed, out_dir=args.out_dir)
    pipe = Pipeline(cfg)
    if args.command == "run-all" or (args.command == "run" and not args.stage):
        ran = pipe.run_all(force=args.force)
        for stage, did in ran.items():
            logger.info("%-16s %s", stage, "ran" if did else "skipped")
        return 0
    stage = args.stage if args.command == "run" else args.command
    pipe.run_stage(stage, force=args.force)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return run(args)
    except FileNotFoundError as exc:
        logger.error("missing input: %s", exc)
        return EXIT_MISSING
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (ConfigError, DataFormatError, ValueError, KeyError, TypeError) as exc:
        logger.error("validation failure: %s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

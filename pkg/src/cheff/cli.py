from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

from cheff.config import PipelineConfig
from cheff.datapipe.index import SourceConfig, build_index
from cheff.datapipe.synthetic import generate_corpus
from cheff.errors import CheffError, ConfigError, DataError
from cheff.pipeline.cascade import sample_cascade
from cheff.pipeline.data import load_image_set
from cheff.pipeline.diagnose import diagnose_schedule_cmd
from cheff.pipeline.evaluate import distribution_report, pairwise_report
from cheff.pipeline.progress import TerminalProgress
from cheff.pipeline.stages import TRAINING_STAGES, run_training_stage
from cheff.pipeline.workflows import InpaintSpace, Workflow, inpaint_cmd, reconstruct


DEFAULT_CONFIG = "config/cheff.toml"
INTERNAL_EXIT_CODE = 1

logger = logging.getLogger(__name__)


class CommandParser(argparse.ArgumentParser):
    """Raises ``ConfigError`` on usage errors instead of exiting."""

    def error(self, message: str) -> NoReturn:
        raise ConfigError(f"{self.prog}: {message}")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=DEFAULT_CONFIG)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="Directory for this command's outputs and manifest.")
    common.add_argument("--keep-intermediate", action="store_true")
    common.add_argument("--verbose", action="store_true")
    return common


def _named_pairs(values: Sequence[str], flag: str) -> list[tuple[str, str]]:
    pairs = []
    for value in values:
        name, sep, rest = value.partition("=")
        if not sep or not name or not rest:
            raise ConfigError(f"{flag} expects NAME=VALUE, got {value!r}.")
        pairs.append((name, rest))
    return pairs


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = CommandParser(prog="cheffctl")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for command, stage in TRAINING_STAGES.items():
        train_parser = subparsers.add_parser(command, parents=[common], help=f"Train the {stage} checkpoint.")
        train_parser.add_argument("--index", help="Dataset index (default: paths.index).")

    sample_parser = subparsers.add_parser("sample", parents=[common], help="Run the SDM -> decoder -> SR cascade.")
    sample_parser.add_argument("-n", "--count", type=int, default=4)
    sample_parser.add_argument("--prompt")
    sample_parser.add_argument("--workers", type=int, default=1)

    reconstruct_parser = subparsers.add_parser("reconstruct", parents=[common], help="Score a reconstruction workflow.")
    reconstruct_parser.add_argument("--workflow", choices=[item.value for item in Workflow], required=True)
    reconstruct_parser.add_argument("--index", help="Dataset index (default: paths.index).")

    inpaint_parser = subparsers.add_parser("inpaint", parents=[common], help="Regenerate a masked image region.")
    inpaint_parser.add_argument("image")
    inpaint_parser.add_argument("mask")
    inpaint_parser.add_argument("--space", choices=[item.value for item in InpaintSpace], default="pixel")
    inpaint_parser.add_argument("--variants", type=int, default=1)
    inpaint_parser.add_argument("--prompt")

    metrics_parser = subparsers.add_parser("metrics", parents=[common], help="Image quality or distribution metrics.")
    metrics_parser.add_argument("mode", choices=["pairwise", "distribution"])
    metrics_parser.add_argument("first", help="Reference image/directory, or the first image set.")
    metrics_parser.add_argument("second", help="Candidate image/directory, or the second image set.")

    index_parser = subparsers.add_parser("build-index", parents=[common], help="Build the dataset index.")
    index_parser.add_argument("--source", action="append", default=[], metavar="NAME=ROOT", help="Directory-layout source.")
    index_parser.add_argument("--csv-source", action="append", default=[], metavar="NAME=ROOT", help="CSV-manifest source.")
    index_parser.add_argument("--output", help="Index path (default: paths.index).")

    diagnose_parser = subparsers.add_parser("diagnose-schedule", parents=[common], help="Check the SDM schedule's terminal noise.")
    diagnose_parser.add_argument("--image", help="Image whose latent is pushed to t=T and decoded.")
    diagnose_parser.add_argument("--beta-end", type=float)

    synth_parser = subparsers.add_parser("synth-corpus", parents=[common], help="Write a synthetic shapes corpus.")
    synth_parser.add_argument("root")
    synth_parser.add_argument("--source", action="append", default=[], metavar="NAME=COUNT")
    synth_parser.add_argument("--size", type=int, default=32)
    synth_parser.add_argument("--no-reports", action="store_true")
    synth_parser.add_argument("--no-labels", action="store_true")
    return parser


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config)
    return config.with_overrides(seed=args.seed, runs_dir=args.out)


def _print_pairs(values: dict[str, object]) -> None:
    for key, value in values.items():
        print(f"{key}={value}")


def run(args: argparse.Namespace) -> None:
    progress = TerminalProgress(enabled=True)

    if args.command == "synth-corpus":
        pairs = _named_pairs(args.source or ["synthetic=200"], "--source")
        if not all(count.isdigit() for _, count in pairs):
            raise ConfigError(f"synth-corpus --source counts must be non-negative integers: {args.source}")
        counts = {name: int(count) for name, count in pairs}
        seed = args.seed if args.seed is not None else 0
        written = generate_corpus(
            args.root,
            counts,
            size=args.size,
            seed=seed,
            with_reports=not args.no_reports,
            with_labels=not args.no_labels,
        )
        _print_pairs(written)
        return

    if args.command == "metrics":
        report = pairwise_report(args.first, args.second) if args.mode == "pairwise" else distribution_report(args.first, args.second)
        _print_pairs(report)
        return

    config = _load_config(args)
    out_dir = Path(config.paths.runs_dir) / args.command

    if args.command in TRAINING_STAGES:
        result = run_training_stage(config, args.command, index=args.index, out_dir=out_dir, progress=progress)
        print(getattr(config.paths, TRAINING_STAGES[args.command]))
        if result.losses:
            print(f"final_loss={result.losses[-1]:.6f}")
        return

    if args.command == "sample":
        images, manifest = sample_cascade(
            config,
            args.count,
            args.prompt,
            out_dir=out_dir,
            keep_intermediate=args.keep_intermediate,
            workers=args.workers,
            progress=progress,
        )
        for path in images:
            print(path)
        print(manifest)
        return

    if args.command == "reconstruct":
        data = load_image_set(args.index or config.paths.index, config.geometry.hr_size)
        report = reconstruct(config, data, args.workflow, out_dir=out_dir, progress=progress)
        _print_pairs({"workflow": report["workflow"], "scope": report["scope"], **report["mean"]})
        return

    if args.command == "inpaint":
        for path in inpaint_cmd(
            config,
            args.image,
            args.mask,
            args.space,
            variants=args.variants,
            prompt=args.prompt,
            out_dir=out_dir,
            progress=progress,
        ):
            print(path)
        return

    if args.command == "build-index":
        sources = [SourceConfig(name=name, root=root) for name, root in _named_pairs(args.source, "--source")]
        sources += [SourceConfig(name=name, root=root, adapter="csv") for name, root in _named_pairs(args.csv_source, "--csv-source")]
        if not sources:
            raise ConfigError("build-index needs at least one --source or --csv-source.")
        output = args.output or config.paths.index
        index = build_index(sources, output)
        _print_pairs({"index": output, **index.counts})
        return

    if args.command == "diagnose-schedule":
        if args.beta_end is not None:
            schedule = config.sdm.schedule.model_copy(update={"beta_end": args.beta_end})
            config = config.model_copy(update={"sdm": config.sdm.model_copy(update={"schedule": schedule})})
        print(diagnose_schedule_cmd(config, image=args.image, out_dir=out_dir).render())
        return


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        run(args)
    except CheffError as exc:
        return _report(exc)
    except OSError as exc:
        return _report(DataError(str(exc)))
    except Exception as exc:
        logger.debug("Unhandled failure", exc_info=True)
        print(f"error: internal: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return INTERNAL_EXIT_CODE
    return 0


def _report(exc: CheffError) -> int:
    print(exc.render(), file=sys.stderr)
    return exc.exit_code

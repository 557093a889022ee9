"""Command-line entry point: fused-nmt <subcommand> [options]."""
import argparse
import logging
import os
import sys
import time
from typing import List, Optional

from dotenv import load_dotenv

from src import experiments
from src.config import (
    ABLATION_ROWS,
    BEAM_PRESETS,
    CONFIG_SNAPSHOT,
    LOG_LEVEL_ENV,
    ExperimentConfig,
    apply_overrides,
    load_config,
)
from src.errors import CheckpointError, ConfigError, DecodingError, ShapeError, TrainingError

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

ERROR_KINDS = (
    (ConfigError, "config"),
    (ShapeError, "shape"),
    (CheckpointError, "checkpoint"),
    (TrainingError, "training"),
    (DecodingError, "decoding"),
    (OSError, "io"),
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_run_options(p: argparse.ArgumentParser):
    p.add_argument("--config", type=str, default=None, help="key=value config file (defaults when omitted)")
    p.add_argument("--seed", type=int, default=None, help="Top-level seed (overrides the config)")
    p.add_argument("--out", type=str, required=True, help="Output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="Config override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fused-nmt", description="Provider-fused translation experiments on synthetic corpora.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Generate a synthetic parallel corpus")
    _add_run_options(p)

    p = sub.add_parser("pretrain-provider", help="Build and pretrain the frozen context provider")
    _add_run_options(p)
    p.add_argument("--data", type=str, default=None, help="Corpus directory from gen-data")

    p = sub.add_parser("train", help="Two-stage training (or a single stage, or random init)")
    _add_run_options(p)
    p.add_argument("--data", type=str, default=None, help="Corpus directory from gen-data")
    p.add_argument("--provider", type=str, default=None, help="Provider checkpoint from pretrain-provider")
    p.add_argument("--stage", choices=["all", "1", "2"], default="all", help="Stages to run (default: all)")
    p.add_argument("--stage1-checkpoint", type=str, default=None, help="Warm-start source for --stage 2")
    p.add_argument("--resume", type=str, default=None, help="Resume from a checkpoint of an interrupted run")
    p.add_argument("--workers", type=int, default=1, help="Threads for the final decode (default: 1)")
    p.add_argument("--progress", action="store_true", help="Show progress bars")

    p = sub.add_parser("decode", help="Decode a split with a trained run")
    p.add_argument("--run", type=str, required=True, help="Run directory from train")
    p.add_argument("--out", type=str, required=True, help="Hypothesis file; metadata goes to <out>.meta")
    p.add_argument("--preset", choices=sorted(BEAM_PRESETS), default=None, help="Beam width / length penalty preset")
    p.add_argument("--split", choices=["train", "valid", "test"], default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="decode.KEY=VALUE")
    p.add_argument("--workers", type=int, default=1, help="Parallel decoding threads (default: 1)")

    p = sub.add_parser("score", help="BLEU and sequence accuracy of a hypothesis file")
    p.add_argument("--hyp", type=str, required=True)
    p.add_argument("--ref", type=str, required=True)

    p = sub.add_parser("ablate", help="Train every ablation row and write a summary table")
    _add_run_options(p)
    p.add_argument("--rows", type=str, default=",".join(ABLATION_ROWS), help="Comma-separated rows (default: all)")
    p.add_argument("--workers", type=int, default=1, help="Parallel runs (default: 1)")

    p = sub.add_parser("dropnet-sweep", help="One run per drop-net rate, merged curves")
    _add_run_options(p)
    p.add_argument("--workers", type=int, default=1, help="Parallel runs (default: 1)")

    p = sub.add_parser("bench-inference", help="Time baseline vs fused decoding of one run")
    p.add_argument("--run", type=str, required=True, help="Run directory of a provider-using variant")
    p.add_argument("--out", type=str, required=True, help="TimingReport CSV path")
    p.add_argument("--sentences", type=int, default=None, help="Decode only the first N test sentences")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    return parser


def resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    overrides.append(f"output_dir={args.out}")
    return apply_overrides(config, overrides)


def _print_block(title: str, values: dict):
    print(f"\n{title}")
    for key, value in values.items():
        print(f"  {key}={value}")


def cmd_gen_data(args) -> int:
    result = experiments.gen_data(resolve_config(args), args.out)
    _print_block(f"Wrote corpus to {args.out}", result.metrics)
    return EXIT_OK


def cmd_pretrain_provider(args) -> int:
    result = experiments.pretrain_provider_run(resolve_config(args), args.out, data_dir=args.data, progress=True)
    _print_block(f"Saved provider to {args.out}", result.metrics)
    return EXIT_OK


def cmd_train(args) -> int:
    result = experiments.train_run(
        resolve_config(args),
        args.out,
        data_dir=args.data,
        provider_path=args.provider,
        resume=args.resume,
        stages=args.stage,
        stage1_checkpoint=args.stage1_checkpoint,
        workers=args.workers,
        progress=args.progress,
    )
    _print_block(f"Run complete: {result.run_dir}", result.metrics)
    return EXIT_OK


def cmd_decode(args) -> int:
    unknown = [o for o in args.overrides if not o.strip().startswith("decode.")]
    if unknown:
        raise ConfigError(f"decode only accepts decode.* overrides, got {unknown}")
    config = load_config(os.path.join(args.run, CONFIG_SNAPSHOT))
    if args.preset:
        beam, alpha = BEAM_PRESETS[args.preset]
        config = apply_overrides(config, [f"decode.beam={beam}", f"decode.alpha={alpha}"])
    config = apply_overrides(config, args.overrides)
    metadata = experiments.decode_run(args.run, args.out, decode=config.decode, split=args.split, workers=args.workers)
    _print_block(f"Wrote {metadata['sentences']} sentences to {args.out}", metadata)
    return EXIT_OK


def cmd_score(args) -> int:
    _print_block("Scores", experiments.score_files(args.hyp, args.ref))
    return EXIT_OK


def cmd_ablate(args) -> int:
    rows = [r.strip() for r in args.rows.split(",") if r.strip()]
    unknown = [r for r in rows if r not in ABLATION_ROWS]
    if unknown:
        raise ConfigError(f"unknown ablation rows {unknown}, expected a subset of {list(ABLATION_ROWS)}")
    frame = experiments.ablate(resolve_config(args), args.out, rows=rows, workers=args.workers)
    print(f"\n{frame.to_string(index=False)}")
    return EXIT_OK if (frame["status"] == "ok").all() else EXIT_RUNTIME


def cmd_dropnet_sweep(args) -> int:
    result = experiments.dropnet_sweep(resolve_config(args), args.out, workers=args.workers)
    curves = result.curves
    print(f"\nWrote {len(curves)} curve points for {curves['p_net'].nunique()} drop-net rates to {args.out}")
    if result.failed:
        print(f"Failed drop-net rates: {result.failed}")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_bench_inference(args) -> int:
    report = experiments.bench_inference(
        args.run, args.out, sentences=args.sentences, repetitions=args.repetitions, warmup=args.warmup
    )
    _print_block(f"Wrote timing report to {args.out}", report.to_frame().iloc[0].to_dict())
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-provider": cmd_pretrain_provider,
    "train": cmd_train,
    "decode": cmd_decode,
    "score": cmd_score,
    "ablate": cmd_ablate,
    "dropnet-sweep": cmd_dropnet_sweep,
    "bench-inference": cmd_bench_inference,
}


def _configure_logging():
    load_dotenv()
    name = os.getenv(LOG_LEVEL_ENV, "INFO").upper()
    level = getattr(logging, name, None)
    logging.basicConfig(
        level=level if isinstance(level, int) else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        force=True,
    )


def _error_kind(error: BaseException) -> str:
    for cls, kind in ERROR_KINDS:
        if isinstance(error, cls):
            return kind
    return "runtime"


def main(argv: Optional[List[str]] = None) -> int:
    _configure_logging()
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as e:
        return int(e.code or 0)

    start_time = time.time()
    try:
        code = COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        logger.debug("Run failed", exc_info=True)
        print(f"error: {_error_kind(e)}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    logger.info(f"{args.command} finished in {time.time() - start_time:.2f}s")
    return code


if __name__ == "__main__":
    sys.exit(main())

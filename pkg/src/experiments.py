"""Experiment runs behind the CLI subcommands and the dagster assets."""
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd

from src.config import (
    ABLATION_ROWS,
    CONFIG_SNAPSHOT,
    DROPNET_SWEEP,
    METRICS_FILE,
    PROVIDER_FILE,
    STAGE1_CHECKPOINT,
    STAGE2_CHECKPOINT,
    TRAIN_LOG,
    DecodeConfig,
    ExperimentConfig,
    FusedModelConfig,
    apply_overrides,
    load_config,
    save_config,
)
from src.data.batching import EncodedSplit, PreparedCorpus, encode_split
from src.data.synthetic import (
    ParallelCorpus,
    ambiguous_accuracy,
    corpus_digest,
    generate,
    lexicon,
    majority_baseline_accuracy,
    read_corpus,
    rule_violations,
    write_corpus,
)
from src.data.vocab import build_vocab
from src.decoding.bleu import BLEU_IMPL, BLEU_TOKENIZATION, corpus_bleu, sequence_accuracy
from src.decoding.timing import REFERENCE_INCREASE_RANGE, TimingReport, timing_harness
from src.decoding.translator import Translator
from src.errors import ConfigError
from src.model.fused import FusedModel
from src.model.wiring import resolve_wiring
from src.provider.encoder import ContextProvider, masked_piece_accuracy, pretrain_provider
from src.provider.store import NmtEncoderProvider, Provider, load_provider, save_provider
from src.training.checkpoint import load_checkpoint, restore_checkpoint
from src.training.trainer import Trainer, TrainRunLog, resolve_model_config, two_stage_train
from src.utils.rng import derive_seed
from src.utils.threading import ProgressReporter

logger = logging.getLogger(__name__)

DATA_DIR = "data"
SWEEP_FAMILIES = {
    ("train", "loss"): "train_loss",
    ("valid", "loss"): "valid_loss",
    ("valid", "bleu"): "valid_bleu",
}


@dataclass
class RunResult:
    run_dir: str
    config: ExperimentConfig
    metrics: Dict[str, object] = field(default_factory=dict)


@dataclass
class SweepResult:
    """Merged curves of the runs that finished, plus the drop-net rates whose run failed."""
    curves: pd.DataFrame
    failed: List[float] = field(default_factory=list)


@dataclass
class LoadedRun:
    config: ExperimentConfig
    model: FusedModel
    data: PreparedCorpus
    provider: Optional[Provider] = None


def write_metrics(path: str, metrics: Dict[str, object]) -> str:
    with open(path, "w") as f:
        f.write(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return path


def load_splits(config: ExperimentConfig, data_dir: Optional[str] = None) -> Dict[str, ParallelCorpus]:
    """Read a generated corpus from `data_dir`, or generate it from the task spec."""
    if data_dir is None:
        return generate(config.task)
    splits, spec = read_corpus(data_dir)
    if spec != config.task:
        raise ConfigError(f"corpus in {data_dir} was generated for a different task spec than the config's task.*")
    return splits


# --- gen-data ---

def gen_data(config: ExperimentConfig, out_dir: str) -> RunResult:
    splits = generate(config.task)
    write_corpus(splits, config.task, out_dir)
    save_config(config, os.path.join(out_dir, CONFIG_SNAPSHOT))
    metrics = {
        "digest": corpus_digest(splits),
        "task": config.task.task,
        **{f"{name}_size": len(c) for name, c in splits.items()},
    }
    if config.task.task == "context_disambiguation":
        metrics["rule_violations"] = sum(rule_violations(c, config.task) for c in splits.values())
        metrics["majority_baseline_accuracy"] = majority_baseline_accuracy(splits["train"], splits["test"], config.task)
    write_metrics(os.path.join(out_dir, METRICS_FILE), metrics)
    return RunResult(out_dir, config, metrics)


# --- providers and data preparation ---

def prepare_data(
    config: ExperimentConfig,
    splits: Dict[str, ParallelCorpus],
    provider: Optional[Provider] = None,
    progress: bool = False,
) -> PreparedCorpus:
    """
    Build both word vocabularies over the full lexicon, encode every split and,
    when a provider is given, cache its states once per sentence.
    """
    words = lexicon(config.task.vocab_size)
    src_vocab = build_vocab(splits["train"], "source", words)
    tgt_vocab = build_vocab(splits["train"], "target", words)
    encoded: Dict[str, EncodedSplit] = {}
    for name, corpus in splits.items():
        encoded[name] = encode_split(corpus, src_vocab, tgt_vocab)
        if provider is not None:
            outputs = provider.encode_corpus(corpus, config.provider.mode, progress)
            encoded[name] = encoded[name].with_provider(outputs)
    return PreparedCorpus(src_vocab, tgt_vocab, encoded, dict(splits))


def train_nmt_encoder(config: ExperimentConfig, splits: Dict[str, ParallelCorpus], progress: bool = False) -> NmtEncoderProvider:
    """Train a separate provider-free translation model and wrap its frozen encoder."""
    data = prepare_data(config, splits)
    model_cfg = resolve_model_config(config, data).model_copy(update={"variant": "no_provider_baseline"})
    model = FusedModel(model_cfg).initialize(derive_seed(config.seed, "init:provider-nmt"))
    logger.info(f"Training the NMT-encoder provider for up to {config.train.stage1_max_steps} steps")
    Trainer(model, config.train, data, config.seed, stage="provider-nmt", decode=config.decode).run(
        config.train.stage1_max_steps, progress=progress
    )
    return NmtEncoderProvider(model, data.src_vocab)


def build_context_provider(config: ExperimentConfig, splits: Dict[str, ParallelCorpus], progress: bool = False) -> Provider:
    if config.provider.kind == "nmt_encoder":
        return train_nmt_encoder(config, splits, progress)
    train = splits["train"]
    return pretrain_provider(list(zip(train.src, train.prev)), config.provider, config.seed)


def fit_provider_width(config: ExperimentConfig, provider: Provider) -> ExperimentConfig:
    """Set model.provider_dim to the width of the provider states."""
    if config.model.provider_dim == provider.width:
        return config
    return apply_overrides(config, [f"model.provider_dim={provider.width}"])


def pretrain_provider_run(config: ExperimentConfig, out_dir: str, data_dir: Optional[str] = None, progress: bool = False) -> RunResult:
    os.makedirs(out_dir, exist_ok=True)
    splits = load_splits(config, data_dir)
    provider = build_context_provider(config, splits, progress)
    config = fit_provider_width(config, provider)
    save_config(config, os.path.join(out_dir, CONFIG_SNAPSHOT))
    save_provider(provider, os.path.join(out_dir, PROVIDER_FILE))
    metrics = {"kind": provider.kind, "width": provider.width}
    if isinstance(provider, ContextProvider):
        valid = splits["valid"]
        metrics["parameters"] = provider.num_parameters()
        metrics["valid_masked_piece_accuracy"] = masked_piece_accuracy(provider, list(zip(valid.src, valid.prev)), config.seed)
    write_metrics(os.path.join(out_dir, METRICS_FILE), metrics)
    return RunResult(out_dir, config, metrics)


# --- train ---

def score_hypotheses(hypotheses: List[str], corpus: ParallelCorpus, config: ExperimentConfig, prefix: str = "") -> Dict[str, float]:
    scores = {
        f"{prefix}bleu": corpus_bleu(hypotheses, corpus.tgt),
        f"{prefix}seq_acc": sequence_accuracy(hypotheses, corpus.tgt),
    }
    if config.task.task == "context_disambiguation":
        scores[f"{prefix}ambiguous_acc"] = ambiguous_accuracy(hypotheses, corpus, config.task)
    return scores


def translate(model: FusedModel, data: PreparedCorpus, decode: DecodeConfig, split: str, workers: int = 1, progress: bool = False) -> List[str]:
    translator = Translator(model, data.tgt_vocab, decode)
    hypotheses = translator.translate_split(data.split(split), workers, progress)
    unfinished = sum(not h.finished for h in hypotheses)
    if unfinished:
        logger.warning(f"{unfinished} of {len(hypotheses)} {split} hypotheses did not finish within max_len")
    return [translator.detokenize(h) for h in hypotheses]


def _write_lines(path: str, lines: Sequence[str]) -> str:
    with open(path, "w") as f:
        f.write("".join(line + "\n" for line in lines))
    return path


def train_run(
    config: ExperimentConfig,
    out_dir: str,
    data_dir: Optional[str] = None,
    splits: Optional[Dict[str, ParallelCorpus]] = None,
    provider: Optional[Provider] = None,
    provider_path: Optional[str] = None,
    resume: Optional[str] = None,
    stages: str = "all",
    stage1_checkpoint: Optional[str] = None,
    workers: int = 1,
    progress: bool = False,
) -> RunResult:
    """
    One full training run into `out_dir`: config snapshot, corpus copy,
    provider checkpoint, train log, stage checkpoints, decoded split and
    metrics.json.
    """
    os.makedirs(out_dir, exist_ok=True)
    start = time.time()
    splits = splits if splits is not None else load_splits(config, data_dir)
    write_corpus(splits, config.task, os.path.join(out_dir, DATA_DIR))

    if resolve_wiring(config.model.variant).uses_provider:
        if provider is None:
            provider = load_provider(provider_path) if provider_path else build_context_provider(config, splits, progress)
        save_provider(provider, os.path.join(out_dir, PROVIDER_FILE))
        config = fit_provider_width(config, provider)
    else:
        provider = None
    save_config(config, os.path.join(out_dir, CONFIG_SNAPSHOT))
    data = prepare_data(config, splits, provider, progress)

    resume_step = load_checkpoint(resume).metadata["trainer"]["log_step"] if resume else None
    log = TrainRunLog(os.path.join(out_dir, TRAIN_LOG), resume_step=resume_step)
    try:
        result = two_stage_train(config, data, out_dir, log, resume, stages, stage1_checkpoint, progress)
    finally:
        log.close()

    final = result.final
    split = config.decode.split
    hypotheses = translate(final.model, data, config.decode, split, workers, progress)
    _write_lines(os.path.join(out_dir, f"{split}.hyp"), hypotheses)

    metrics: Dict[str, object] = {
        "variant": config.model.variant,
        "provider_kind": config.provider.kind if provider is not None else None,
        "init": config.train.init,
        "steps": final.step,
        "converged": final.converged,
        "parameters": final.model.num_parameters(),
        "seconds": round(time.time() - start, 3),
        **score_hypotheses(hypotheses, data.corpus[split], config, prefix=f"{split}_"),
    }
    if final.final is not None:
        metrics.update({"valid_loss": final.final.loss, "valid_bleu": final.final.bleu, "valid_seq_acc": final.final.seq_acc})
    if result.stage1 is not None and result.stage1.final is not None:
        metrics.update({"stage1_steps": result.stage1.step, "stage1_valid_seq_acc": result.stage1.final.seq_acc})
    write_metrics(os.path.join(out_dir, METRICS_FILE), metrics)
    logger.info(f"Run {out_dir} finished: " + ", ".join(f"{k}={v}" for k, v in sorted(metrics.items()) if k.startswith(split)))
    return RunResult(out_dir, config, metrics)


# --- decode / score ---

def load_run(run_dir: str, checkpoint: Optional[str] = None) -> LoadedRun:
    """Rebuild a trained model, its data and its provider from a run directory."""
    config = load_config(os.path.join(run_dir, CONFIG_SNAPSHOT))
    if checkpoint is None:
        checkpoint = STAGE2_CHECKPOINT if os.path.exists(os.path.join(run_dir, STAGE2_CHECKPOINT)) else STAGE1_CHECKPOINT
    ckpt = load_checkpoint(os.path.join(run_dir, checkpoint))
    model = FusedModel(FusedModelConfig.model_validate(ckpt.metadata["model_config"]))
    restore_checkpoint(ckpt, model)
    provider = None
    if model.uses_provider:
        provider = load_provider(os.path.join(run_dir, PROVIDER_FILE))
    splits = load_splits(config, os.path.join(run_dir, DATA_DIR))
    return LoadedRun(config, model.eval(), prepare_data(config, splits, provider), provider)


def decode_run(
    run_dir: str,
    out_path: str,
    decode: Optional[DecodeConfig] = None,
    split: Optional[str] = None,
    workers: int = 1,
    progress: bool = False,
) -> Dict[str, object]:
    """
    Decode one split of a trained run: sentences go to `out_path`, the
    metadata block (scores, decode settings, BLEU provenance) to `out_path`.meta.
    """
    run = load_run(run_dir)
    decode = decode or run.config.decode
    split = split or decode.split
    hypotheses = translate(run.model, run.data, decode, split, workers, progress)
    _write_lines(out_path, hypotheses)
    references = run.data.corpus[split].tgt
    metadata = {
        "bleu": corpus_bleu(hypotheses, references),
        "seq_acc": sequence_accuracy(hypotheses, references),
        "bleu_impl": BLEU_IMPL,
        "tokenization": BLEU_TOKENIZATION,
        "beam": decode.beam,
        "alpha": decode.alpha,
        "split": split,
        "sentences": len(hypotheses),
    }
    _write_lines(out_path + ".meta", [f"{k}={v}" for k, v in metadata.items()])
    return metadata


def _read_lines(path: str) -> List[str]:
    if not os.path.exists(path):
        raise ConfigError(f"input file {path} not found")
    with open(path, "r") as f:
        return [line.rstrip("\n") for line in f]


def score_files(hypothesis_path: str, reference_path: str) -> Dict[str, object]:
    hypotheses, references = _read_lines(hypothesis_path), _read_lines(reference_path)
    return {
        "bleu": corpus_bleu(hypotheses, references),
        "seq_acc": sequence_accuracy(hypotheses, references),
        "bleu_impl": BLEU_IMPL,
        "tokenization": BLEU_TOKENIZATION,
        "sentences": len(hypotheses),
    }


# --- ablate / dropnet-sweep ---

def ablation_config(config: ExperimentConfig, row: str) -> ExperimentConfig:
    """Overrides that turn the base config into one ablation row."""
    controls = {
        "random_init": ["model.variant=full", "train.init=random"],
        "random_provider": ["model.variant=full", "provider.kind=random_frozen"],
        "nmt_encoder_provider": ["model.variant=full", "provider.kind=nmt_encoder"],
    }
    if row in controls:
        return apply_overrides(config, controls[row])
    if row not in ABLATION_ROWS:
        raise ConfigError(f"unknown ablation row '{row}', expected one of {list(ABLATION_ROWS)}")
    return apply_overrides(config, [f"model.variant={row}"])


def _shared_providers(configs: Sequence[ExperimentConfig], splits, progress: bool) -> Dict[str, Provider]:
    """Build each distinct provider kind once; frozen providers are read-only across runs."""
    providers: Dict[str, Provider] = {}
    for cfg in configs:
        kind = cfg.provider.kind
        if resolve_wiring(cfg.model.variant).uses_provider and kind not in providers:
            providers[kind] = build_context_provider(cfg, splits, progress)
    return providers


def _run_many(
    jobs: Dict[str, ExperimentConfig],
    out_dir: str,
    splits: Dict[str, ParallelCorpus],
    workers: int,
    label: str,
) -> Dict[str, Optional[RunResult]]:
    """Fan training runs out over threads, one run per worker."""
    providers = _shared_providers(list(jobs.values()), splits, progress=False)
    results: Dict[str, Optional[RunResult]] = {}
    progress = ProgressReporter(len(jobs), label=label)
    progress.start()

    def run_one(item):
        name, cfg = item
        try:
            results[name] = train_run(cfg, os.path.join(out_dir, name), splits=splits, provider=providers.get(cfg.provider.kind))
        except Exception as e:
            logger.error(f"Run {name} failed: {e}")
            results[name] = None
        progress.finish(name, ok=results[name] is not None)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        list(executor.map(run_one, jobs.items()))
    progress.stop()
    return results


def ablate(config: ExperimentConfig, out_dir: str, rows: Sequence[str] = ABLATION_ROWS, workers: int = 1) -> pd.DataFrame:
    """Train every ablation row and collect one summary row per variant into ablation.csv."""
    os.makedirs(out_dir, exist_ok=True)
    save_config(config, os.path.join(out_dir, CONFIG_SNAPSHOT))
    splits = generate(config.task)
    jobs = {row: ablation_config(config, row) for row in rows}
    results = _run_many(jobs, out_dir, splits, workers, label="ablation runs")
    split = config.decode.split
    summary = []
    for row in rows:
        result = results.get(row)
        record = {"row": row, "variant": jobs[row].model.variant, "status": "ok" if result else "failed"}
        if result is not None:
            for key in (f"{split}_bleu", f"{split}_seq_acc", f"{split}_ambiguous_acc", "valid_loss", "steps", "parameters"):
                if key in result.metrics:
                    record[key] = result.metrics[key]
        summary.append(record)
    frame = pd.DataFrame(summary)
    frame.to_csv(os.path.join(out_dir, "ablation.csv"), index=False)
    return frame


def dropnet_sweep(config: ExperimentConfig, out_dir: str, values: Sequence[float] = DROPNET_SWEEP, workers: int = 1) -> SweepResult:
    """
    Train one run per drop-net rate and merge the training-loss, validation-loss
    and validation-BLEU curves into dropnet_sweep.csv (p_net, step, metric, value).
    """
    os.makedirs(out_dir, exist_ok=True)
    save_config(config, os.path.join(out_dir, CONFIG_SNAPSHOT))
    splits = generate(config.task)
    jobs = {f"p_net_{p}": apply_overrides(config, [f"model.p_net={p}"]) for p in values}
    results = _run_many(jobs, out_dir, splits, workers, label="sweep runs")
    frames, failed = [], []
    for p, name in zip(values, jobs):
        if results.get(name) is None:
            failed.append(p)
            continue
        curves = pd.read_csv(os.path.join(out_dir, name, TRAIN_LOG))
        curves["metric"] = [SWEEP_FAMILIES.get(key) for key in zip(curves["split"], curves["metric"])]
        curves = curves.dropna(subset=["metric"])
        curves.insert(0, "p_net", p)
        frames.append(curves[["p_net", "step", "metric", "value"]])
    merged = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["p_net", "step", "metric", "value"])
    merged.to_csv(os.path.join(out_dir, "dropnet_sweep.csv"), index=False)
    if failed:
        logger.error(f"Drop-net sweep: runs failed for p_net in {failed}")
    return SweepResult(curves=merged, failed=failed)


# --- bench-inference ---

def bench_inference(
    run_dir: str,
    out_path: str,
    sentences: Optional[int] = None,
    repetitions: int = 3,
    warmup: int = 1,
    clock: Optional[Callable[[], float]] = None,
) -> TimingReport:
    """
    Time test-split decoding of the stage-1 baseline against the fused stage-2
    model of the same run, with identical decode settings. The fused timing
    includes computing the provider states.
    """
    fused = load_run(run_dir, STAGE2_CHECKPOINT)
    if not fused.model.uses_provider:
        raise ConfigError(f"{run_dir} holds variant '{fused.model.config.variant}', which has no provider to time")
    baseline = load_run(run_dir, STAGE1_CHECKPOINT)
    corpus = fused.data.corpus["test"]
    corpus = corpus.subset(sentences) if sentences else corpus
    plain = encode_split(corpus, fused.data.src_vocab, fused.data.tgt_vocab)
    decode = fused.config.decode

    def run_baseline():
        return Translator(baseline.model, baseline.data.tgt_vocab, decode).translate_split(plain)

    def run_fused():
        outputs = fused.provider.encode_corpus(corpus, fused.config.provider.mode)
        return Translator(fused.model, fused.data.tgt_vocab, decode).translate_split(plain.with_provider(outputs))

    kwargs = {"clock": clock} if clock is not None else {}
    report = timing_harness(run_baseline, run_fused, repetitions=repetitions, warmup=warmup, **kwargs)
    report.write_csv(out_path)
    low, high = REFERENCE_INCREASE_RANGE
    logger.info(f"Fused decoding is {report.increase_ratio:+.1%} vs baseline (reference range {low:.1%} to {high:.1%})")
    return report

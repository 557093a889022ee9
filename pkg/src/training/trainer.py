"""Training loop, curve logging and the two-stage warm-start protocol."""
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import pandas as pd
from tqdm import tqdm

from src.config import (
    STAGE1_CHECKPOINT,
    STAGE2_CHECKPOINT,
    DecodeConfig,
    ExperimentConfig,
    FusedModelConfig,
    TrainConfig,
)
from src.data.batching import PreparedCorpus, collate, make_batches
from src.decoding.bleu import corpus_bleu, sequence_accuracy
from src.decoding.translator import Translator
from src.errors import ConfigError
from src.model.dropnet import draw_sample
from src.model.fused import FusedModel, warm_start
from src.tensor import backward, no_grad, recording, scale
from src.training.checkpoint import load_checkpoint, restore_checkpoint, save_checkpoint
from src.training.loss import label_smoothed_nll
from src.training.optim import Adam, InverseSqrtSchedule
from src.utils.rng import derive_rng, derive_seed, restore_rng, rng_state
from src.utils.threading import ThreadSafeCsvWriter

logger = logging.getLogger(__name__)


class TrainRunLog:
    """
    Curve log with one `step,split,metric,value` row per logged event.

    With `resume_step`, rows written after that step by an interrupted run are
    dropped before appending.
    """

    HEADER = ("step", "split", "metric", "value")

    def __init__(self, path: Optional[str] = None, resume_step: Optional[int] = None):
        self.path = path
        self.rows: List[tuple] = []
        if path is not None and resume_step is not None and os.path.exists(path) and os.path.getsize(path) > 0:
            kept = pd.read_csv(path)
            kept = kept[kept["step"] <= resume_step]
            kept.to_csv(path, index=False, lineterminator="\n")
            self.rows = [(int(r.step), r.split, r.metric, float(r.value)) for r in kept.itertuples(index=False)]
        self._writer = ThreadSafeCsvWriter(path, self.HEADER, append=resume_step is not None) if path else None

    def log(self, step: int, split: str, metric: str, value: float):
        row = (int(step), split, metric, float(value))
        self.rows.append(row)
        if self._writer is not None:
            self._writer.write(row)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(self.HEADER))

    def series(self, split: str, metric: str) -> pd.Series:
        df = self.frame()
        df = df[(df["split"] == split) & (df["metric"] == metric)]
        return pd.Series(df["value"].to_numpy(), index=df["step"].to_numpy(), name=f"{split}_{metric}")

    def close(self):
        if self._writer is not None:
            self._writer.close()
            self._writer = None


@dataclass
class EvalResult:
    step: int
    loss: float
    bleu: float
    seq_acc: float


@dataclass
class TrainResult:
    model: FusedModel
    step: int
    losses: List[float]
    evals: List[EvalResult]
    converged: bool = False
    checkpoint: Optional[str] = None

    @property
    def final(self) -> Optional[EvalResult]:
        return self.evals[-1] if self.evals else None

    @property
    def best(self) -> Optional[EvalResult]:
        return min(self.evals, key=lambda e: e.loss) if self.evals else None


@dataclass
class TwoStageResult:
    stage1: Optional[TrainResult] = None
    stage2: Optional[TrainResult] = None
    shared: List[str] = field(default_factory=list)

    @property
    def final(self) -> TrainResult:
        return self.stage2 if self.stage2 is not None else self.stage1


class Trainer:
    """
    Token-batched training of one model on the train split of a prepared corpus.

    Batching, drop-net draws and dropout masks use separate random streams
    split from the run seed, and their states travel with every checkpoint so
    a resumed run repeats an unbroken one exactly.
    """

    def __init__(
        self,
        model: FusedModel,
        config: TrainConfig,
        data: PreparedCorpus,
        seed: int,
        stage: str = "stage2",
        log: Optional[TrainRunLog] = None,
        log_offset: int = 0,
        decode: Optional[DecodeConfig] = None,
    ):
        self.model = model
        self.config = config
        self.data = data
        self.stage = stage
        self.log = log or TrainRunLog()
        self.log_offset = log_offset
        self.decode = decode or DecodeConfig()
        self.optimizer = Adam(
            model.trainable_parameters(),
            InverseSqrtSchedule(config.max_lr, config.warmup_init_lr, config.warmup_updates),
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.eps,
            weight_decay=config.weight_decay,
        )
        self.batch_rng = derive_rng(seed, f"{stage}:batches")
        self.dropnet_rng = derive_rng(seed, f"{stage}:dropnet")
        self.dropout_rng = derive_rng(seed, f"{stage}:dropout")
        self.batches = make_batches(data.split("train"), config.batch_tokens)
        self.order: List[int] = []
        self.cursor = 0
        self.epoch = 0
        self.step = 0
        self.best_loss: Optional[float] = None
        self.bad_evals = 0
        self.converged = False
        self.losses: List[float] = []
        self.evals: List[EvalResult] = []

    @property
    def log_step(self) -> int:
        return self.log_offset + self.step

    def _next_batch(self):
        if self.cursor >= len(self.order):
            self.order = [int(i) for i in self.batch_rng.permutation(len(self.batches))]
            self.cursor = 0
            self.epoch += 1
        indices = self.batches[self.order[self.cursor]]
        self.cursor += 1
        return collate(self.data.split("train"), indices, self.data.tgt_vocab)

    def train_step(self) -> float:
        """One optimizer update over `accumulate` batches; returns the mean loss."""
        model, cfg = self.model.train(), self.config
        pad = self.data.tgt_vocab.pad_id
        sample = None
        if model.wiring.fused:
            sample = draw_sample(self.dropnet_rng, model.config.layers, model.config.shared_dropnet_draws)
        self.optimizer.zero_grad()
        total = 0.0
        for _ in range(cfg.accumulate):
            batch = self._next_batch()
            with recording():
                logits = model.forward(batch, sample, self.dropout_rng)
                loss = label_smoothed_nll(logits, batch.tgt_out, pad_id=pad, smoothing=cfg.label_smoothing)
                backward(scale(loss, 1.0 / cfg.accumulate))
            total += loss.item() / cfg.accumulate
        lr = self.optimizer.step()
        self.step += 1
        self.losses.append(total)
        self.log.log(self.log_step, "train", "loss", total)
        if self.step % cfg.log_interval == 0:
            logger.info(f"[{self.stage}] step {self.step}: loss={total:.4f} lr={lr:.3e}")
        return total

    def validation_loss(self) -> float:
        """Exact token-level NLL over the whole validation split."""
        model, valid = self.model.eval(), self.data.split("valid")
        pad = self.data.tgt_vocab.pad_id
        total = count = 0.0
        with no_grad():
            for indices in make_batches(valid, self.config.batch_tokens):
                batch = collate(valid, indices, self.data.tgt_vocab)
                loss = label_smoothed_nll(model.forward(batch), batch.tgt_out, pad_id=pad).item()
                total += loss * batch.num_tokens
                count += batch.num_tokens
        return total / count

    def evaluate(self) -> EvalResult:
        n = min(self.config.valid_decode_size, len(self.data.split("valid")))
        hypotheses = Translator(self.model, self.data.tgt_vocab, self.decode).greedy_translate(self.data.split("valid").subset(n))
        references = self.data.corpus["valid"].tgt[:n]
        result = EvalResult(
            step=self.step,
            loss=self.validation_loss(),
            bleu=corpus_bleu(hypotheses, references),
            seq_acc=sequence_accuracy(hypotheses, references),
        )
        for metric in ("loss", "bleu", "seq_acc"):
            self.log.log(self.log_step, "valid", metric, getattr(result, metric))
        logger.info(
            f"[{self.stage}] step {self.step}: valid_loss={result.loss:.4f} "
            f"valid_bleu={result.bleu:.2f} valid_seq_acc={result.seq_acc:.3f}"
        )
        self.evals.append(result)
        return result

    def _track_convergence(self, result: EvalResult):
        if self.best_loss is None or result.loss < self.best_loss:
            self.best_loss = result.loss
            self.bad_evals = 0
        else:
            self.bad_evals += 1
        if self.config.until_convergence and self.bad_evals >= self.config.patience:
            logger.info(f"[{self.stage}] no validation improvement for {self.bad_evals} evaluations, stopping at step {self.step}")
            self.converged = True

    def run(self, max_steps: int, checkpoint_path: Optional[str] = None, progress: bool = False) -> TrainResult:
        """
        Train until `max_steps` updates or convergence. Evaluates every
        `eval_interval` steps and at the last step; writes `checkpoint_path`
        after each evaluation.
        """
        bar = tqdm(total=max_steps, initial=self.step, desc=self.stage, disable=not progress)
        while self.step < max_steps and not self.converged:
            self.train_step()
            bar.update(1)
            if self.step % self.config.eval_interval == 0 or self.step == max_steps:
                self._track_convergence(self.evaluate())
                if checkpoint_path is not None:
                    self.save(checkpoint_path)
        bar.close()
        return TrainResult(
            model=self.model,
            step=self.step,
            losses=list(self.losses),
            evals=list(self.evals),
            converged=self.converged,
            checkpoint=checkpoint_path,
        )

    def _state(self) -> Dict[str, Any]:
        return {
            "stage": self.stage,
            "log_offset": self.log_offset,
            "log_step": self.log_step,
            "epoch": self.epoch,
            "order": self.order,
            "cursor": self.cursor,
            "best_loss": self.best_loss,
            "bad_evals": self.bad_evals,
            "converged": self.converged,
            "rng": {
                "batches": rng_state(self.batch_rng),
                "dropnet": rng_state(self.dropnet_rng),
                "dropout": rng_state(self.dropout_rng),
            },
        }

    def save(self, path: str) -> str:
        return save_checkpoint(path, self.model, self.optimizer, step=self.step, metadata={"trainer": self._state()})

    def resume(self, path: str) -> "Trainer":
        checkpoint = load_checkpoint(path)
        restore_checkpoint(checkpoint, self.model, self.optimizer)
        state = checkpoint.metadata["trainer"]
        self.step = checkpoint.step
        self.log_offset = int(state["log_offset"])
        self.epoch = int(state["epoch"])
        self.order = [int(i) for i in state["order"]]
        self.cursor = int(state["cursor"])
        self.best_loss = state["best_loss"]
        self.bad_evals = int(state["bad_evals"])
        self.converged = bool(state["converged"])
        self.batch_rng = restore_rng(state["rng"]["batches"])
        self.dropnet_rng = restore_rng(state["rng"]["dropnet"])
        self.dropout_rng = restore_rng(state["rng"]["dropout"])
        logger.info(f"Resumed {self.stage} from {path} at step {self.step}")
        return self


def resolve_model_config(config: ExperimentConfig, data: PreparedCorpus) -> FusedModelConfig:
    """Fill vocabulary sizes left at 0 from the prepared vocabularies."""
    update = {}
    if config.model.src_vocab == 0:
        update["src_vocab"] = len(data.src_vocab)
    if config.model.tgt_vocab == 0:
        update["tgt_vocab"] = len(data.tgt_vocab)
    return config.model.model_copy(update=update)


def two_stage_train(
    config: ExperimentConfig,
    data: PreparedCorpus,
    run_dir: Optional[str] = None,
    log: Optional[TrainRunLog] = None,
    resume: Optional[str] = None,
    stages: str = "all",
    stage1_checkpoint: Optional[str] = None,
    progress: bool = False,
) -> TwoStageResult:
    """
    Stage 1 trains the baseline without provider inputs; stage 2 builds the
    configured variant, copies every shared parameter from stage 1 by name and
    trains with drop-net active. `train.init=random` skips stage 1.

    Args:
        stages: 'all', '1' (stop after the baseline) or '2' (warm-start from
            `stage1_checkpoint`, or the stage-1 checkpoint in `run_dir`)
        resume: a checkpoint written by either stage of an interrupted run

    Raises:
        CheckpointError: when the stage-1 parameters do not fit the stage-2 model
        ConfigError: when stage 2 is requested without a stage-1 checkpoint
    """
    if stages not in ("all", "1", "2"):
        raise ConfigError(f"unknown stage selection '{stages}', expected all, 1 or 2")
    train_cfg = config.train
    model_cfg = resolve_model_config(config, data)
    seed = config.seed
    log = log or TrainRunLog()
    stage1_path = os.path.join(run_dir, STAGE1_CHECKPOINT) if run_dir else None
    stage2_path = os.path.join(run_dir, STAGE2_CHECKPOINT) if run_dir else None
    resumed = load_checkpoint(resume).metadata["trainer"] if resume else None

    if train_cfg.init == "random":
        logger.info(f"Single-stage training of '{model_cfg.variant}' from random initialization")
        model = FusedModel(model_cfg).initialize(derive_seed(seed, "init:stage2"))
        trainer = Trainer(model, train_cfg, data, seed, "stage2", log, decode=config.decode)
        if resumed is not None:
            trainer.resume(resume)
        return TwoStageResult(stage2=trainer.run(train_cfg.max_steps, stage2_path, progress))

    result = TwoStageResult()
    if stages == "2" or (resumed is not None and resumed["stage"] == "stage2"):
        source = stage1_checkpoint or stage1_path
        if source is None or not os.path.exists(source):
            raise ConfigError("stage 2 needs a stage-1 checkpoint (pass one, or run stage 1 into the same directory)")
        stage1_ckpt = load_checkpoint(source)
        stage1_state, stage1_steps = stage1_ckpt.params, stage1_ckpt.step
    else:
        baseline_cfg = model_cfg.model_copy(update={"variant": "no_provider_baseline"})
        baseline = FusedModel(baseline_cfg).initialize(derive_seed(seed, "init:stage1"))
        trainer1 = Trainer(baseline, train_cfg, data, seed, "stage1", log, decode=config.decode)
        if resumed is not None:
            trainer1.resume(resume)
        logger.info(f"Stage 1: baseline for up to {train_cfg.stage1_max_steps} steps")
        result.stage1 = trainer1.run(train_cfg.stage1_max_steps, stage1_path, progress)
        if stages == "1":
            return result
        stage1_state, stage1_steps = baseline.state_dict(), result.stage1.step

    logger.info(f"Stage 2: '{model_cfg.variant}' warm-started from stage 1")
    model = FusedModel(model_cfg).initialize(derive_seed(seed, "init:stage2"))
    result.shared = warm_start(model, stage1_state)
    trainer2 = Trainer(model, train_cfg, data, seed, "stage2", log, log_offset=stage1_steps, decode=config.decode)
    if train_cfg.continue_schedule:
        trainer2.optimizer.schedule_offset = stage1_steps
    if resumed is not None and resumed["stage"] == "stage2":
        trainer2.resume(resume)
    result.stage2 = trainer2.run(train_cfg.max_steps, stage2_path, progress)
    return result

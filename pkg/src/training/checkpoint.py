"""Training checkpoints: parameters, optimizer moments, step and random-stream state."""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from src.errors import CheckpointError
from src.nn import Module
from src.training.optim import Adam
from src.utils.container import read_container, write_container

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "training-checkpoint"
PARAM_PREFIX = "param/"


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(
    path: str,
    model: Module,
    optimizer: Optional[Adam] = None,
    step: int = 0,
    metadata: Optional[Dict[str, Any]] = None,
) -> str:
    arrays = {f"{PARAM_PREFIX}{name}": values for name, values in model.state_dict().items()}
    meta = dict(metadata or {})
    meta.update({"format": CHECKPOINT_FORMAT, "step": step})
    if hasattr(model, "config"):
        meta["model_config"] = model.config.model_dump()
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
        meta["optimizer_step"] = optimizer.state.step
        meta["schedule_offset"] = optimizer.schedule_offset
    write_container(path, arrays, meta)
    logger.debug(f"Saved checkpoint at step {step} to {path}")
    return path


def load_checkpoint(path: str) -> Checkpoint:
    arrays, metadata = read_container(path)
    if metadata.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a training checkpoint (format={metadata.get('format')!r})")
    params = {k[len(PARAM_PREFIX) :]: v for k, v in arrays.items() if k.startswith(PARAM_PREFIX)}
    optimizer = {k: v for k, v in arrays.items() if not k.startswith(PARAM_PREFIX)}
    return Checkpoint(params=params, optimizer=optimizer, step=int(metadata["step"]), metadata=metadata)


def restore_checkpoint(checkpoint: Checkpoint, model: Module, optimizer: Optional[Adam] = None):
    """
    Load parameters (and optimizer moments) into existing objects.

    Raises:
        CheckpointError: when the stored model configuration or any parameter shape disagrees
    """
    stored = checkpoint.metadata.get("model_config")
    if stored is not None and hasattr(model, "config"):
        current = model.config.model_dump()
        diffs = [f"{k}: checkpoint {stored.get(k)!r} vs model {current.get(k)!r}" for k in sorted(current) if stored.get(k) != current.get(k)]
        if diffs:
            raise CheckpointError("checkpoint was written for a different model:\n  " + "\n  ".join(diffs))
    model.load_state_dict(checkpoint.params)
    if optimizer is not None:
        optimizer.load_state_arrays(
            checkpoint.optimizer,
            step=int(checkpoint.metadata.get("optimizer_step", 0)),
            schedule_offset=int(checkpoint.metadata.get("schedule_offset", 0)),
        )

import logging
from typing import Optional

import numpy as np

from src.errors import ShapeError
from src.tensor import Tensor, add, constant, log_softmax, mul, pick, reshape, scale, sum_all, sum_last

logger = logging.getLogger(__name__)


def label_smoothed_nll(
    logits: Tensor,
    targets: np.ndarray,
    pad_id: Optional[int] = None,
    smoothing: float = 0.0,
) -> Tensor:
    """
    Mean over non-PAD positions of (1 - eps) * NLL + eps * mean_v(-log p_v).

    Args:
        logits: [..., V] unnormalized scores
        targets: integer array matching logits.shape[:-1]
        pad_id: target id excluded from the mean
        smoothing: eps; 0 gives the exact negative log-likelihood

    Raises:
        ValueError: if every position is padding
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"loss: logits {logits.shape} vs targets {targets.shape}")
    vocab = logits.shape[-1]
    flat_targets = targets.reshape(-1)
    if flat_targets.size and (flat_targets.min() < 0 or flat_targets.max() >= vocab):
        raise ValueError(f"target id outside vocabulary of {vocab}")
    weights = np.ones(flat_targets.shape) if pad_id is None else (flat_targets != pad_id).astype(np.float64)
    count = weights.sum()
    if count == 0:
        raise ValueError("loss over a batch where every position is padding")

    lp = log_softmax(reshape(logits, (flat_targets.size, vocab)))
    per_token = scale(pick(lp, flat_targets), -(1.0 - smoothing))
    if smoothing > 0.0:
        per_token = add(per_token, scale(sum_last(lp), -smoothing / vocab))
    return scale(sum_all(mul(per_token, constant(weights))), 1.0 / count)

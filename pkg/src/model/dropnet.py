"""
Drop-net: per-layer stochastic choice between two attention branches.

During training each layer draws U ~ Uniform[0, 1] once per iteration. With
rate p, the first branch is used alone when U < p/2, the second alone when
U > 1 - p/2, and their average otherwise. Evaluation always averages, which is
the expectation of the training rule.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.errors import ShapeError
from src.tensor import Tensor, add, scale

logger = logging.getLogger(__name__)

BRANCH_A, BRANCH_B, BOTH = "a", "b", "both"


@dataclass(frozen=True)
class DropNetSample:
    """One iteration's draws: one U per encoder layer and one per decoder layer."""
    encoder: np.ndarray
    decoder: np.ndarray

    @classmethod
    def fixed(cls, layers: int, u: float) -> "DropNetSample":
        draws = np.full(layers, float(u))
        return cls(encoder=draws, decoder=draws.copy())


def draw_sample(rng: np.random.Generator, layers: int, shared: bool = False) -> DropNetSample:
    encoder = rng.random(layers)
    decoder = encoder.copy() if shared else rng.random(layers)
    return DropNetSample(encoder=encoder, decoder=decoder)


def branch_choice(u: float, p_net: float) -> str:
    if not 0.0 <= p_net <= 1.0:
        raise ValueError(f"p_net must lie in [0, 1], got {p_net}")
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"drop-net draw must lie in [0, 1], got {u}")
    if u < p_net / 2:
        return BRANCH_A
    if u > 1.0 - p_net / 2:
        return BRANCH_B
    return BOTH


def combine_eval(branch_a: Tensor, branch_b: Tensor) -> Tensor:
    if branch_a.shape != branch_b.shape:
        raise ShapeError(f"drop-net branches differ in shape: {branch_a.shape} vs {branch_b.shape}")
    return scale(add(branch_a, branch_b), 0.5)


def combine_train(branch_a: Tensor, branch_b: Tensor, u: float, p_net: float) -> Tensor:
    if branch_a.shape != branch_b.shape:
        raise ShapeError(f"drop-net branches differ in shape: {branch_a.shape} vs {branch_b.shape}")
    choice = branch_choice(u, p_net)
    if choice == BRANCH_A:
        return branch_a
    if choice == BRANCH_B:
        return branch_b
    return combine_eval(branch_a, branch_b)


def combine(branch_a: Tensor, branch_b: Tensor, u: Optional[float], p_net: float, training: bool) -> Tensor:
    """Training rule when a draw is supplied in training mode, expectation otherwise."""
    if training and u is not None:
        return combine_train(branch_a, branch_b, u, p_net)
    return combine_eval(branch_a, branch_b)

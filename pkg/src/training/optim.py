"""Adam with decoupled weight decay and the inverse square-root schedule."""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, MAX_LR, WARMUP_INIT_LR, WARMUP_UPDATES, WEIGHT_DECAY
from src.errors import CheckpointError, TrainingError
from src.nn import Parameter

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InverseSqrtSchedule:
    """Linear warmup from `warmup_init_lr` to `max_lr`, then max_lr * sqrt(warmup / step)."""
    max_lr: float = MAX_LR
    warmup_init_lr: float = WARMUP_INIT_LR
    warmup_updates: int = WARMUP_UPDATES

    def lr_at(self, step: int) -> float:
        if step < 1:
            raise ValueError(f"learning-rate steps start at 1, got {step}")
        if step < self.warmup_updates:
            return self.warmup_init_lr + (self.max_lr - self.warmup_init_lr) * step / self.warmup_updates
        return self.max_lr * math.sqrt(self.warmup_updates / step)


def lr_at(step: int) -> float:
    return InverseSqrtSchedule().lr_at(step)


@dataclass
class OptimizerState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    weight_decay: float = WEIGHT_DECAY


def adam_step(
    params: Sequence[Tuple[str, Parameter]],
    grads: Dict[str, Optional[np.ndarray]],
    state: OptimizerState,
    lr: float,
):
    """
    One Adam update in place. The step counter is incremented first so bias
    correction uses t >= 1; weight decay is applied to the parameter directly,
    not through the moments. Parameters without a gradient are left alone.

    Raises:
        TrainingError: if any gradient holds NaN or inf; nothing is updated then
    """
    for name, _ in params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter '{name}' at step {state.step + 1}")
    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, p in params:
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise TrainingError(f"gradient for '{name}' has shape {g.shape}, parameter has {p.shape}")
        m = state.m.setdefault(name, np.zeros(p.shape))
        v = state.v.setdefault(name, np.zeros(p.shape))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p.values -= lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p.values)


class Adam:
    """Adam over the trainable parameters of a model; frozen parameters are never registered."""

    def __init__(
        self,
        named_params: Sequence[Tuple[str, Parameter]],
        schedule: InverseSqrtSchedule = InverseSqrtSchedule(),
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
        weight_decay: float = WEIGHT_DECAY,
    ):
        self.params: List[Tuple[str, Parameter]] = [(n, p) for n, p in named_params if p.requires_grad]
        self.schedule = schedule
        self.state = OptimizerState(beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
        # First scheduled step; stage 2 can continue a stage-1 schedule.
        self.schedule_offset = 0

    @property
    def names(self) -> List[str]:
        return [n for n, _ in self.params]

    def current_lr(self) -> float:
        return self.schedule.lr_at(self.state.step + self.schedule_offset + 1)

    def step(self) -> float:
        lr = self.current_lr()
        adam_step(self.params, {n: p.grad for n, p in self.params}, self.state, lr)
        return lr

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {}
        for name, _ in self.params:
            if name in self.state.m:
                arrays[f"adam_m/{name}"] = self.state.m[name]
                arrays[f"adam_v/{name}"] = self.state.v[name]
        return arrays

    def load_state_arrays(self, arrays: Dict[str, np.ndarray], step: int, schedule_offset: int = 0):
        names = set(self.names)
        for key, value in arrays.items():
            kind, _, name = key.partition("/")
            if kind not in ("adam_m", "adam_v"):
                continue
            if name not in names:
                raise CheckpointError(f"optimizer state for unknown parameter '{name}'")
            target = self.state.m if kind == "adam_m" else self.state.v
            target[name] = np.array(value, dtype=np.float64)
        self.state.step = step
        self.schedule_offset = schedule_offset

"""Parameter containers: named, initializable, freezable."""
import logging
from typing import Dict, Iterator, List, Tuple

import numpy as np

from src.errors import CheckpointError
from src.tensor import Tensor
from src.utils.rng import derive_rng

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """A learned tensor; `init` names the initializer used by Module.initialize."""

    def __init__(self, shape, init: str = "xavier"):
        super().__init__(np.zeros(shape), requires_grad=True)
        self.init = init


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{key}", value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, child in enumerate(value):
                    yield from child.named_parameters(f"{prefix}{key}.{i}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for child in value:
                    yield from child.modules()

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> List[Tuple[str, Parameter]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def train(self) -> "Module":
        for m in self.modules():
            m.training = True
        return self

    def eval(self) -> "Module":
        for m in self.modules():
            m.training = False
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self.eval()

    def initialize(self, seed: int) -> "Module":
        """Fill every parameter from a stream derived from (seed, parameter name)."""
        for name, p in self.named_parameters():
            init_parameter(p, derive_rng(seed, f"init:{name}"))
        return self

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True):
        """Copy `state` into the parameters; nothing is written unless every entry fits."""
        own = dict(self.named_parameters())
        problems, updates = [], []
        for name, p in own.items():
            if name not in state:
                if strict:
                    problems.append(f"missing {name} {p.shape}")
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                problems.append(f"shape {name}: model {p.shape} vs state {value.shape}")
                continue
            updates.append((p, value))
        if strict:
            problems.extend(f"unexpected {name} {np.shape(state[name])}" for name in state if name not in own)
        if problems:
            raise CheckpointError("state does not match model:\n  " + "\n  ".join(problems))
        for p, value in updates:
            p.values[...] = value

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def init_parameter(p: Parameter, rng: np.random.Generator):
    if p.init == "zeros":
        p.values[...] = 0.0
    elif p.init == "ones":
        p.values[...] = 1.0
    elif p.init == "normal":
        p.values[...] = rng.normal(0.0, p.shape[-1] ** -0.5, size=p.shape)
    elif p.init == "xavier":
        fan_in, fan_out = p.shape[0], p.shape[-1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        p.values[...] = rng.uniform(-bound, bound, size=p.shape)
    else:
        raise ValueError(f"unknown initializer '{p.init}'")

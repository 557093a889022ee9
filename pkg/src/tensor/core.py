"""
Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation records its output on the current thread's
ComputationTape when at least one operand is tracked. `backward(loss)` replays
the tape in reverse execution order and accumulates gradients additively, so a
tensor consumed by several operations (the provider states feed every layer)
receives the sum of all contributions.

Shapes are checked at every operation boundary. The only implicit broadcast is
scalar-times-tensor; row-vector biases go through the explicit `add_bias`.
"""
import logging
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import ShapeError, TrainingError

logger = logging.getLogger(__name__)

_local = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Row-major float64 array with an optional accumulated gradient."""

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values, requires_grad=False, name=self.name)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, float(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else shift(self, -float(other))

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor / tensor is not supported; divide by a python scalar")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class ComputationTape:
    """Ordered record of the differentiable operations executed on this thread."""

    def __init__(self):
        self.nodes: List[Tensor] = []
        self._ids = set()

    def record(self, node: Tensor):
        self.nodes.append(node)
        self._ids.add(id(node))

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._ids

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self):
        self.nodes = []
        self._ids = set()

    def backward(self, loss: Tensor):
        if loss.size != 1:
            raise TrainingError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise TrainingError("backward called on an untracked tensor")
        if not loss.is_leaf and loss not in self:
            raise TrainingError("loss was not produced on the current tape")

        grads = {id(loss): np.ones_like(loss.values)}
        leaves = {}
        if loss.is_leaf:
            leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad
                if parent.is_leaf:
                    leaves[key] = parent
        for key, leaf in leaves.items():
            g = grads.pop(key, None)
            if g is None:
                continue
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        logger.debug(f"Backward over {len(self.nodes)} recorded operations, {len(leaves)} leaves")


def current_tape() -> ComputationTape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = ComputationTape()
        _local.tape = tape
    return tape


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def recording() -> Iterator[ComputationTape]:
    """Start a fresh tape for one forward/backward pass."""
    previous = getattr(_local, "tape", None)
    tape = ComputationTape()
    _local.tape = tape
    try:
        yield tape
    finally:
        tape.clear()
        _local.tape = previous


@contextmanager
def no_grad():
    previous = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


def backward(loss: Tensor):
    """Populate `.grad` on every tracked ancestor of the scalar `loss`."""
    tape = current_tape()
    tape.backward(loss)
    tape.clear()


def _result(values: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=track)
    if track:
        out._parents = parents
        out._backward = backward_fn
        current_tape().record(out)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


# --- elementwise ---

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _result(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _result(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.values, b.values
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.values * c, (x,), lambda g: (g * c,))


def shift(x: Tensor, c: float) -> Tensor:
    return _result(x.values + c, (x,), lambda g: (g,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x[..., n] + bias[n]; the one explicit row broadcast."""
    if bias.ndim != 1 or x.ndim < 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: shape mismatch {x.shape} vs {bias.shape}")
    n = bias.shape[0]
    return _result(x.values + bias.values, (x, bias), lambda g: (g, g.reshape(-1, n).sum(axis=0)))


def relu(x: Tensor) -> Tensor:
    positive = x.values > 0
    return _result(np.where(positive, x.values, 0.0), (x,), lambda g: (g * positive,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.values)
    return _result(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xv = x.values
    return _result(np.log(xv), (x,), lambda g: (g / xv,))


# --- linear algebra / layout ---

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a[..., m, k] @ b[k, n] (shared weight) or a[..., m, k] @ b[..., k, n] (equal leading dims)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: leading extents differ, {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.ndim != b.ndim:
        raise ShapeError(f"matmul: rank mismatch, {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    if b.ndim == 2:
        k, n = bv.shape

        def backward_fn(g):
            return g @ bv.T, av.reshape(-1, k).T @ g.reshape(-1, n)
    else:
        def backward_fn(g):
            return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    return _result(av @ bv, (a, b), backward_fn)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose needs rank >= 2, got {x.shape}")
    return _result(np.swapaxes(x.values, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        values = x.values.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {original} as {tuple(shape)}") from e
    return _result(values, (x,), lambda g: (g.reshape(original),))


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[-1]:
        raise ShapeError(f"slice_last: [{start}:{stop}] out of range for {x.shape}")
    shape = x.shape

    def backward_fn(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _result(x.values[..., start:stop], (x,), backward_fn)


def slice_axis(x: Tensor, axis: int, stop: int) -> Tensor:
    """Keep indices [0, stop) along `axis`."""
    axis = axis % x.ndim
    if not 0 < stop <= x.shape[axis]:
        raise ShapeError(f"slice_axis: stop={stop} out of range for axis {axis} of {x.shape}")
    if stop == x.shape[axis]:
        return x
    shape = x.shape
    index = tuple(slice(0, stop) if i == axis else slice(None) for i in range(x.ndim))

    def backward_fn(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _result(x.values[index], (x,), backward_fn)


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    if len(parts) == 1:
        return parts[0]
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat_last: leading shapes differ, {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[-1] for p in parts])

    def backward_fn(g):
        return tuple(g[..., bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.values for p in parts], axis=-1), tuple(parts), backward_fn)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """table[ids]; ids is any integer array, output shape ids.shape + (d,)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D table, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])][0]
        raise ValueError(f"out-of-vocabulary id {int(bad)} for table of {table.shape[0]} rows")
    rows = table.shape

    def backward_fn(g):
        full = np.zeros(rows)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, rows[1]))
        return (full,)

    return _result(table.values[ids], (table,), backward_fn)


def pick(x: Tensor, index: np.ndarray) -> Tensor:
    """x[n, index[n]] for a 2-D x."""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"pick: shape mismatch {x.shape} vs index {index.shape}")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def backward_fn(g):
        full = np.zeros(shape)
        full[rows, index] = g
        return (full,)

    return _result(x.values[rows, index], (x,), backward_fn)


# --- reductions ---

def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.array(x.values.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    return scale(sum_all(x), 1.0 / n)


def sum_last(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(x.values.sum(axis=-1), (x,), lambda g: (np.broadcast_to(g[..., None], shape).copy(),))


# --- normalizations ---

def softmax(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis; positions where `mask` is False get exactly 0."""
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("softmax of an empty input")
    xv = x.values
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax: mask shape {mask.shape} vs input {x.shape}")
        if not mask.any(axis=-1).all():
            raise ValueError("softmax: every position of a row is masked")
        shifted = np.where(mask, xv, -np.inf)
    else:
        shifted = xv
    peak = shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted - peak)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward_fn)


def log_softmax(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("log_softmax of an empty input")
    xv = x.values
    shifted = xv - xv.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(y)

    def backward_fn(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result(y, (x,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.shape[-1] if x.ndim else 0
    if d < 2:
        raise ValueError(f"layer_norm needs at least 2 features, got {d}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs features {d}")
    xv = x.values
    mu = xv.mean(axis=-1, keepdims=True)
    centered = xv - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gv = gain.values

    def backward_fn(g):
        gx_hat = g * gv
        gx = inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).reshape(-1, d).sum(axis=0), g.reshape(-1, d).sum(axis=0)

    return _result(xhat * gv + bias.values, (x, gain, bias), backward_fn)

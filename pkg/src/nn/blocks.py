"""
Attention, feed-forward, layer normalization and embeddings.

Batched tensors are laid out [batch, time, features]. Attention masks are
boolean with True marking a visible key.
"""
import logging
import math
from typing import Optional

import numpy as np

from src.errors import ShapeError
from src.nn.module import Module, Parameter
from src.tensor import (
    Tensor,
    add,
    add_bias,
    concat_last,
    constant,
    gather_rows,
    layer_norm,
    matmul,
    mul,
    relu,
    reshape,
    scale,
    slice_axis,
    slice_last,
    softmax,
    transpose,
)

logger = logging.getLogger(__name__)


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    """pe[pos, 2i] = sin(pos / 10000^(2i/d)), pe[pos, 2i+1] = cos(same)."""
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-math.log(10000.0) * np.arange(0, d, 2, dtype=np.float64) / d)
    angles = positions * rates[None, :]
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d // 2])
    return pe


def add_positions(x: Tensor) -> Tensor:
    """x[B, T, d] + sinusoids for positions 0..T-1."""
    batch, length, d = x.shape
    pe = np.broadcast_to(sinusoidal_positions(length, d), (batch, length, d)).copy()
    return add(x, constant(pe))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        self.weight = Parameter((d_in, d_out))
        self.bias = Parameter((d_out,), init="zeros") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return add_bias(y, self.bias) if self.bias is not None else y


class Embedding(Module):
    def __init__(self, vocab_size: int, d: int):
        self.table = Parameter((vocab_size, d), init="normal")

    def forward(self, ids: np.ndarray, positions: bool = True) -> Tensor:
        x = gather_rows(self.table, ids)
        return add_positions(x) if positions else x


def embed(tokens, table: Tensor) -> Tensor:
    """Row lookup plus sinusoidal positions for one sequence; returns [len, d]."""
    ids = np.asarray(getattr(tokens, "ids", tokens), dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embed expects a single id sequence, got shape {ids.shape}")
    rows = gather_rows(table, ids)
    return add(rows, constant(sinusoidal_positions(len(ids), table.shape[1])))


class Attention(Module):
    """
    Multi-head attention without an output projection.

    Each head scores the projected query against the projected keys and pools
    the projected values; head outputs are concatenated. Query, key and value
    inputs may all have different widths.
    """

    def __init__(self, d_query: int, d_key: int, d_value: int, d_att: int, heads: int = 1, scaling: bool = True):
        if heads < 1 or d_att % heads:
            raise ShapeError(f"attention width {d_att} is not divisible by {heads} heads")
        self.W_q = Parameter((d_query, d_att))
        self.W_k = Parameter((d_key, d_att))
        self.W_v = Parameter((d_value, d_att))
        self.heads = heads
        self.scaling = scaling

    @property
    def d_att(self) -> int:
        return self.W_q.shape[1]

    def forward(self, query: Tensor, keys: Tensor, values: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        """
        Args:
            query: [B, Tq, d_query]
            keys: [B, Tk, d_key]
            values: [B, Tk, d_value]
            mask: boolean [B, Tk] (key padding) or [B, Tq, Tk]; None means all visible

        Returns:
            [B, Tq, d_att]
        """
        if query.ndim != 3 or keys.ndim != 3 or values.ndim != 3:
            raise ShapeError(f"attention expects rank-3 inputs, got {query.shape}, {keys.shape}, {values.shape}")
        batch, tq, _ = query.shape
        if keys.shape[:2] != values.shape[:2] or keys.shape[0] != batch:
            raise ShapeError(f"attention: keys {keys.shape} and values {values.shape} do not pair with query {query.shape}")
        for name, x, w in (("query", query, self.W_q), ("key", keys, self.W_k), ("value", values, self.W_v)):
            if x.shape[-1] != w.shape[0]:
                raise ShapeError(f"attention: {name} width {x.shape[-1]} vs projection {w.shape}")
        tk = keys.shape[1]
        if tk == 0:
            raise ValueError("attention over an empty key sequence")

        if mask is None:
            mask = np.ones((batch, tq, tk), dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape == (batch, tk):
                mask = mask[:, None, :]
            if mask.shape[0] != batch or mask.shape[-1] != tk:
                raise ShapeError(f"attention: mask {mask.shape} vs query {query.shape} / keys {keys.shape}")
            mask = np.broadcast_to(mask, (batch, tq, tk)).copy()

        visible = mask.any(axis=(0, 1))
        if not visible.any():
            raise ValueError("attention: every key position is masked")
        # Trailing keys hidden from every query are dropped so padded and
        # unpadded inputs run identical arithmetic.
        used = int(np.nonzero(visible)[0][-1]) + 1
        if used < tk:
            keys = slice_axis(keys, 1, used)
            values = slice_axis(values, 1, used)
            mask = mask[:, :, :used]

        q_all = matmul(query, self.W_q)
        k_all = matmul(keys, self.W_k)
        v_all = matmul(values, self.W_v)
        d_head = self.d_att // self.heads
        outputs = []
        for h in range(self.heads):
            if self.heads == 1:
                q, k, v = q_all, k_all, v_all
            else:
                lo, hi = h * d_head, (h + 1) * d_head
                q, k, v = slice_last(q_all, lo, hi), slice_last(k_all, lo, hi), slice_last(v_all, lo, hi)
            logits = matmul(q, transpose(k))
            if self.scaling:
                logits = scale(logits, 1.0 / math.sqrt(d_head))
            outputs.append(matmul(softmax(logits, mask), v))
        return concat_last(outputs)


def attn(q: Tensor, K: Tensor, V: Tensor, params: Attention, mask: Optional[np.ndarray] = None) -> Tensor:
    """Single-query attention: q[d_q], K[n, d_k], V[n, d_v] -> [d_att]."""
    if q.ndim != 1 or K.ndim != 2 or V.ndim != 2:
        raise ShapeError(f"attn expects q[d], K[n, d], V[n, d]; got {q.shape}, {K.shape}, {V.shape}")
    n = K.shape[0]
    key_mask = None if mask is None else np.asarray(mask, dtype=bool).reshape(1, n)
    out = params.forward(
        reshape(q, (1, 1, q.shape[0])),
        reshape(K, (1, n, K.shape[1])),
        reshape(V, (1, V.shape[0], V.shape[1])),
        key_mask,
    )
    return reshape(out, (params.d_att,))


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int):
        self.W_1 = Parameter((d_model, d_ff))
        self.b_1 = Parameter((d_ff,), init="zeros")
        self.W_2 = Parameter((d_ff, d_model))
        self.b_2 = Parameter((d_model,), init="zeros")

    def forward(self, x: Tensor) -> Tensor:
        hidden = relu(add_bias(matmul(x, self.W_1), self.b_1))
        return add_bias(matmul(hidden, self.W_2), self.b_2)


def ffn(x: Tensor, params: FeedForward) -> Tensor:
    """W_2 max(W_1 x + b_1, 0) + b_2 for a single vector."""
    if x.ndim != 1:
        raise ShapeError(f"ffn expects a vector, got {x.shape}")
    return reshape(params.forward(reshape(x, (1, x.shape[0]))), (params.W_2.shape[1],))


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Parameter((d,), init="ones")
        self.bias = Parameter((d,), init="zeros")
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted activation dropout; identity outside training or at rate 0."""
    if not training or rate == 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, constant(keep))

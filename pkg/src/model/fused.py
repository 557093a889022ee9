"""
Encoder/decoder whose layers also attend to frozen provider states.

Encoder layer l (full variant):
    h~ = combine(attn_S(h, H_E, H_E), attn_B(h, H_B, H_B))
    h' = LN(h + h~);  out = LN(h' + FFN(h'))
Decoder layer l (full variant):
    s^ = LN(s + attn_S(s, S_<=t, S_<=t))
    s~ = LN(s^ + combine(attn_B(s^, H_B, H_B), attn_E(s^, H_E^L, H_E^L)))
    out = LN(s~ + FFN(s~))
`combine` is the drop-net rule in training and the plain average otherwise.
Variants that remove a provider branch use a single-branch sublayer with no
averaging; the stacked decoder runs attn_E then attn_B, each as its own
residual sublayer.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.config import FusedModelConfig
from src.errors import CheckpointError, ConfigError, DecodingError, ShapeError
from src.model.dropnet import DropNetSample, combine
from src.model.wiring import Wiring, resolve_wiring
from src.nn import Attention, Embedding, FeedForward, LayerNorm, Linear, Module, Parameter, add_positions, dropout
from src.provider.output import ProviderBatch
from src.tensor import Tensor, add, add_bias, constant, log_softmax, matmul, no_grad, reshape, slice_last, softmax, transpose

logger = logging.getLogger(__name__)

# Parameter-name prefixes of the modules that only exist in the fused model
PROVIDER_MODULES = ("provider_attn", "provider_linear", "provider_proj", "norm_provider")


@dataclass
class EncoderState:
    """H_E^0..H_E^L plus the combined attention sublayer output of every layer."""
    layers: List[Tensor]
    mixes: List[Tensor]
    mask: np.ndarray

    @property
    def output(self) -> Tensor:
        return self.layers[-1]

    def select(self, index: np.ndarray) -> "EncoderState":
        """Constant copy of the final layer for the given batch rows."""
        index = np.asarray(index, dtype=np.int64)
        return EncoderState(layers=[constant(self.output.values[index])], mixes=[], mask=self.mask[index])


@dataclass
class DecoderState:
    """S^0..S^L, the self-attention sublayer output s^ and the mixed sublayer s~ per layer."""
    layers: List[Tensor] = field(default_factory=list)
    self_attended: List[Tensor] = field(default_factory=list)
    mixes: List[Tensor] = field(default_factory=list)
    logits: Optional[Tensor] = None


def _attention(config: FusedModelConfig, d_key: int) -> Attention:
    d = config.d_model
    return Attention(d, d_key, d_key, d, heads=config.heads, scaling=config.attention_scaling)


class EncoderLayer(Module):
    def __init__(self, config: FusedModelConfig, wiring: Wiring):
        d = config.d_model
        self.self_attn = _attention(config, d)
        self.provider_attn = _attention(config, config.provider_dim) if wiring.enc_branch == "attn" else None
        self.provider_linear = None
        if wiring.enc_branch == "linear":
            operand = config.provider_dim if config.linear_feed_operand == "provider" else d
            self.provider_linear = Linear(operand, d, bias=False)
        self.norm_attn = LayerNorm(d)
        self.ffn = FeedForward(d, config.d_ff)
        self.norm_ffn = LayerNorm(d)
        self.p_net = config.p_net
        self.dropout = config.dropout
        self.linear_operand = config.linear_feed_operand

    def mix(self, h: Tensor, src_mask: np.ndarray, provider: Optional[ProviderBatch], u: Optional[float]) -> Tensor:
        a = self.self_attn.forward(h, h, h, src_mask)
        if self.provider_attn is not None:
            b = self.provider_attn.forward(h, provider.states, provider.states, provider.mask)
        elif self.provider_linear is not None:
            operand = provider.aligned(h.shape[1]) if self.linear_operand == "provider" else h
            b = self.provider_linear.forward(operand)
        else:
            return a
        return combine(a, b, u, self.p_net, self.training)

    def forward(self, h, src_mask, provider=None, u=None, rng=None) -> Tuple[Tensor, Tensor]:
        m = self.mix(h, src_mask, provider, u)
        h = self.norm_attn.forward(add(h, dropout(m, self.dropout, rng, self.training)))
        out = self.norm_ffn.forward(add(h, dropout(self.ffn.forward(h), self.dropout, rng, self.training)))
        return out, m


class DecoderLayer(Module):
    def __init__(self, config: FusedModelConfig, wiring: Wiring):
        d = config.d_model
        self.self_attn = _attention(config, d)
        self.norm_self = LayerNorm(d)
        self.enc_attn = _attention(config, d)
        self.norm_cross = LayerNorm(d)
        self.provider_attn = _attention(config, config.provider_dim) if wiring.dec_branch else None
        self.norm_provider = LayerNorm(d) if wiring.dec_branch == "stacked" else None
        self.ffn = FeedForward(d, config.d_ff)
        self.norm_ffn = LayerNorm(d)
        self.branch = wiring.dec_branch
        self.p_net = config.p_net
        self.dropout = config.dropout

    def _drop(self, x: Tensor, rng) -> Tensor:
        return dropout(x, self.dropout, rng, self.training)

    def forward(
        self,
        s: Tensor,
        causal: np.ndarray,
        enc: EncoderState,
        provider: Optional[ProviderBatch] = None,
        u: Optional[float] = None,
        rng=None,
    ) -> Tuple[Tensor, Tensor, Tensor]:
        s_hat = self.norm_self.forward(add(s, self._drop(self.self_attn.forward(s, s, s, causal), rng)))
        h_enc = enc.output
        if self.branch == "stacked":
            s_bar = self.norm_cross.forward(
                add(s_hat, self._drop(self.enc_attn.forward(s_hat, h_enc, h_enc, enc.mask), rng))
            )
            m = self.provider_attn.forward(s_bar, provider.states, provider.states, provider.mask)
            s_tilde = self.norm_provider.forward(add(s_bar, self._drop(m, rng)))
        else:
            m = self.enc_attn.forward(s_hat, h_enc, h_enc, enc.mask)
            if self.branch == "parallel":
                b = self.provider_attn.forward(s_hat, provider.states, provider.states, provider.mask)
                m = combine(b, m, u, self.p_net, self.training)
            s_tilde = self.norm_cross.forward(add(s_hat, self._drop(m, rng)))
        out = self.norm_ffn.forward(add(s_tilde, self._drop(self.ffn.forward(s_tilde), rng)))
        return out, s_hat, m


class FusedModel(Module):
    def __init__(self, config: FusedModelConfig):
        if config.src_vocab < 1 or config.tgt_vocab < 1:
            raise ConfigError(f"vocabulary sizes must be set, got src={config.src_vocab} tgt={config.tgt_vocab}")
        self.config = config
        self.wiring = resolve_wiring(config.variant)
        d = config.d_model
        self.src_embed = Embedding(config.src_vocab, d) if self.wiring.enc_embed == "words" else None
        self.provider_proj = Linear(config.provider_dim, d) if self.wiring.enc_embed == "provider" else None
        self.tgt_embed = Embedding(config.tgt_vocab, d)
        self.encoder = [EncoderLayer(config, self.wiring) for _ in range(config.layers)]
        self.decoder = [DecoderLayer(config, self.wiring) for _ in range(config.layers)]
        if config.tie_embeddings:
            self.output = None
            self.output_bias = Parameter((config.tgt_vocab,), init="zeros")
        else:
            self.output = Linear(d, config.tgt_vocab)

    @property
    def uses_provider(self) -> bool:
        return self.wiring.uses_provider

    def provider_parameter_names(self) -> List[str]:
        return [n for n, _ in self.named_parameters() if self._is_provider_module(n)]

    @staticmethod
    def _is_provider_module(name: str) -> bool:
        return any(part in PROVIDER_MODULES for part in name.split("."))

    def _check_provider(self, provider: Optional[ProviderBatch]):
        if not self.uses_provider:
            return
        if provider is None:
            raise ValueError(f"variant '{self.config.variant}' needs provider states")
        if provider.width != self.config.provider_dim:
            raise ShapeError(
                f"configured provider width d_B={self.config.provider_dim} but H_B has width {provider.width}"
            )

    def encode(
        self,
        src: np.ndarray,
        src_mask: np.ndarray,
        provider: Optional[ProviderBatch] = None,
        sample: Optional[DropNetSample] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> EncoderState:
        self._check_provider(provider)
        if self.src_embed is not None:
            h = self.src_embed.forward(src)
        else:
            h = add_positions(self.provider_proj.forward(provider.aligned(src.shape[1])))
        h = dropout(h, self.config.dropout, rng, self.training)
        layers, mixes = [h], []
        for l, layer in enumerate(self.encoder):
            u = None if sample is None else float(sample.encoder[l])
            h, m = layer.forward(h, src_mask, provider, u, rng)
            layers.append(h)
            mixes.append(m)
        return EncoderState(layers=layers, mixes=mixes, mask=np.asarray(src_mask, dtype=bool))

    def project(self, s: Tensor) -> Tensor:
        if self.output is None:
            return add_bias(matmul(s, transpose(self.tgt_embed.table)), self.output_bias)
        return self.output.forward(s)

    def decode(
        self,
        enc: EncoderState,
        tgt_in: np.ndarray,
        provider: Optional[ProviderBatch] = None,
        sample: Optional[DropNetSample] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> DecoderState:
        """Parallel decoder pass over the whole prefix `tgt_in` [B, t]; position t only sees positions <= t."""
        self._check_provider(provider)
        batch, length = tgt_in.shape
        causal = np.broadcast_to(np.tril(np.ones((length, length), dtype=bool)), (batch, length, length))
        s = dropout(self.tgt_embed.forward(tgt_in), self.config.dropout, rng, self.training)
        state = DecoderState(layers=[s])
        for l, layer in enumerate(self.decoder):
            u = None if sample is None else float(sample.decoder[l])
            s, s_hat, m = layer.forward(s, causal, enc, provider, u, rng)
            state.layers.append(s)
            state.self_attended.append(s_hat)
            state.mixes.append(m)
        state.logits = self.project(s)
        return state

    def forward(self, batch, sample: Optional[DropNetSample] = None, rng=None) -> Tensor:
        """Logits [B, t, V] for a collated Batch."""
        enc = self.encode(batch.src, batch.src_mask, batch.provider, sample, rng)
        return self.decode(enc, batch.tgt_in, batch.provider, sample, rng).logits

    def decode_step(
        self,
        prefix: np.ndarray,
        enc: EncoderState,
        provider: Optional[ProviderBatch] = None,
        sample: Optional[DropNetSample] = None,
        position: Optional[int] = None,
    ) -> Tensor:
        """
        Next-token distribution [B, V] after `prefix` [B, t] (BOS first),
        taken at `position` (default: the last prefix position).

        Raises:
            DecodingError: if `position` lies outside the generated prefix
        """
        prefix = np.asarray(prefix, dtype=np.int64)
        if prefix.ndim != 2 or prefix.shape[1] == 0:
            raise DecodingError(f"decode_step needs a non-empty [B, t] prefix, got shape {prefix.shape}")
        t = prefix.shape[1]
        position = t - 1 if position is None else position
        if not 0 <= position < t:
            raise DecodingError(f"position {position} is beyond the generated prefix of length {t}")
        logits = self.decode(enc, prefix[:, : position + 1], provider, sample).logits
        batch, steps, vocab = logits.shape
        last = slice_last(reshape(logits, (batch, steps * vocab)), (steps - 1) * vocab, steps * vocab)
        return softmax(last)

    def next_log_probs(self, prefix: np.ndarray, enc: EncoderState, provider: Optional[ProviderBatch] = None) -> np.ndarray:
        """Log-probabilities [B, V] of the token following each prefix row."""
        with no_grad():
            logits = self.decode(enc, np.asarray(prefix, dtype=np.int64), provider).logits
            return log_softmax(constant(logits.values[:, -1])).values


def warm_start(model: FusedModel, stage1: Dict[str, np.ndarray]) -> List[str]:
    """
    Copy every stage-1 parameter whose name the fused model shares; modules
    that only exist in the fused model keep their fresh initialization.

    Raises:
        CheckpointError: listing every shared parameter whose shape differs
    """
    own = dict(model.named_parameters())
    shared = [n for n in own if n in stage1]
    diffs = [
        f"{n}: stage-1 {tuple(np.shape(stage1[n]))} vs stage-2 {own[n].shape}"
        for n in shared
        if tuple(np.shape(stage1[n])) != own[n].shape
    ]
    if diffs:
        raise CheckpointError("stage-1 checkpoint does not fit the stage-2 model:\n  " + "\n  ".join(diffs))
    for n in shared:
        own[n].values[...] = stage1[n]
    fresh = [n for n in own if n not in stage1]
    unused = [n for n in stage1 if n not in own]
    logger.info(f"Warm start: copied {len(shared)} parameters, {len(fresh)} freshly initialized, {len(unused)} unused")
    return shared

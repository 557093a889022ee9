"""
The frozen context provider: a small Transformer encoder over character
pieces, pretrained by masked-piece prediction and then frozen.
"""
import logging
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from src.config import WARMUP_INIT_LR, ProviderConfig
from src.errors import ConfigError
from src.nn import Embedding, FeedForward, LayerNorm, Linear, Module, Attention
from src.provider.output import ProviderOutput
from src.provider.tokenizer import PieceTokenizer
from src.tensor import Tensor, add, backward, no_grad, recording
from src.training.loss import label_smoothed_nll
from src.training.optim import Adam, InverseSqrtSchedule
from src.utils.rng import derive_rng, derive_seed

logger = logging.getLogger(__name__)

SourcePair = Tuple[str, Optional[str]]


class ProviderLayer(Module):
    def __init__(self, config: ProviderConfig):
        d = config.d_model
        self.self_attn = Attention(d, d, d, d, heads=config.heads, scaling=True)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(d, config.d_ff)
        self.norm2 = LayerNorm(d)

    def forward(self, x: Tensor, mask: Optional[np.ndarray]) -> Tensor:
        h = self.norm1.forward(add(x, self.self_attn.forward(x, x, x, mask)))
        return self.norm2.forward(add(h, self.ffn.forward(h)))


class ContextProvider(Module):
    def __init__(self, tokenizer: PieceTokenizer, config: ProviderConfig):
        if config.kind == "nmt_encoder":
            raise ConfigError("ContextProvider builds pretrained or random_frozen providers, not nmt_encoder")
        self.tokenizer = tokenizer
        self.config = config
        self.embedding = Embedding(len(tokenizer), config.d_model)
        self.layers = [ProviderLayer(config) for _ in range(config.layers)]
        self.mlm_head = Linear(config.d_model, len(tokenizer))

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def width(self) -> int:
        return self.config.d_model

    def hidden(self, ids: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
        """Last-layer states for a [B, T] batch of piece ids."""
        x = self.embedding.forward(ids)
        for layer in self.layers:
            x = layer.forward(x, mask)
        return x

    def frame(self, x: str, mode: str = "sentence", x_prev: Optional[str] = None):
        if not x.split():
            raise ValueError("cannot encode an empty sentence")
        if mode == "document":
            if x_prev is None:
                raise ValueError("document mode requires the preceding sentence")
            return self.tokenizer.frame(x, x_prev)
        if mode != "sentence":
            raise ConfigError(f"unknown provider mode '{mode}'")
        return self.tokenizer.frame(x)

    def encode(self, x: str, mode: str = "sentence", x_prev: Optional[str] = None) -> ProviderOutput:
        return self.encode_many([(x, x_prev)], mode)[0]

    def encode_many(self, pairs: Sequence[SourcePair], mode: str = "sentence", progress: bool = False) -> List[ProviderOutput]:
        """
        Encode (x, x_prev) pairs. Sequences of equal framed length run as one
        batch without padding, so a sentence gets the same states alone or in
        a corpus.
        """
        framed = [self.frame(x, mode, prev) for x, prev in pairs]
        groups: Dict[int, List[int]] = defaultdict(list)
        for n, (sequence, _) in enumerate(framed):
            groups[len(sequence)].append(n)
        outputs: List[Optional[ProviderOutput]] = [None] * len(framed)
        items = sorted(groups.items())
        with no_grad():
            for length, members in tqdm(items, desc="provider", disable=not progress):
                ids = np.stack([framed[n][0].ids for n in members])
                states = self.hidden(ids).values
                for row, n in enumerate(members):
                    outputs[n] = ProviderOutput(
                        states=states[row].copy(),
                        mask=np.ones(length, dtype=bool),
                        x_span=framed[n][1],
                    )
        return outputs

    def encode_corpus(self, corpus, mode: str = "sentence", progress: bool = False) -> List[ProviderOutput]:
        prevs = corpus.prev if mode == "document" else [None] * len(corpus.src)
        return self.encode_many(list(zip(corpus.src, prevs)), mode, progress)


def build_provider(tokenizer: PieceTokenizer, config: ProviderConfig, seed: int) -> ContextProvider:
    return ContextProvider(tokenizer, config).initialize(derive_seed(seed, "provider"))


# --- masked-piece pretraining ---

def _collate_pieces(sequences: Sequence[np.ndarray], pad_id: int) -> Tuple[np.ndarray, np.ndarray]:
    longest = max(len(s) for s in sequences)
    ids = np.full((len(sequences), longest), pad_id, dtype=np.int64)
    for n, s in enumerate(sequences):
        ids[n, : len(s)] = s
    return ids, ids != pad_id


def mask_pieces(
    ids: np.ndarray,
    tokenizer: PieceTokenizer,
    rng: np.random.Generator,
    mask_prob: float,
    corrupt: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Select ~mask_prob of the ordinary pieces (at least one per row). With
    `corrupt`, 80% of the selection becomes MASK, 10% a random piece and 10%
    stays; otherwise every selected piece becomes MASK.

    Returns the corrupted inputs and the boolean selection.
    """
    candidates = ids >= tokenizer.num_specials
    selected = candidates & (rng.random(ids.shape) < mask_prob)
    for row in np.nonzero(~selected.any(axis=1) & candidates.any(axis=1))[0]:
        columns = np.nonzero(candidates[row])[0]
        selected[row, columns[int(rng.integers(0, len(columns)))]] = True
    inputs = ids.copy()
    if not corrupt:
        inputs[selected] = tokenizer.mask_id
        return inputs, selected
    roll = rng.random(ids.shape)
    inputs[selected & (roll < 0.8)] = tokenizer.mask_id
    replace = selected & (roll >= 0.8) & (roll < 0.9)
    inputs[replace] = rng.choice(tokenizer.piece_ids, size=int(replace.sum()))
    return inputs, selected


def masked_piece_loss(provider: ContextProvider, inputs: np.ndarray, valid: np.ndarray, ids: np.ndarray, selected: np.ndarray) -> Tensor:
    logits = provider.mlm_head.forward(provider.hidden(inputs, valid))
    pad = provider.tokenizer.pad_id
    return label_smoothed_nll(logits, np.where(selected, ids, pad), pad_id=pad)


def _framed_ids(provider: ContextProvider, pairs: Sequence[SourcePair]) -> List[np.ndarray]:
    mode = provider.config.mode
    return [provider.frame(x, mode, prev)[0].ids for x, prev in pairs]


def pretrain_provider(
    pairs: Sequence[SourcePair],
    config: ProviderConfig,
    seed: int,
    tokenizer: Optional[PieceTokenizer] = None,
) -> ContextProvider:
    """
    Build a provider over `pairs` of (sentence, preceding sentence) and, for the
    'pretrained' kind, train it by masked-piece prediction. The result is frozen.
    """
    if tokenizer is None:
        tokenizer = PieceTokenizer.build([x for x, _ in pairs] + [p for _, p in pairs if p])
    provider = build_provider(tokenizer, config, seed)
    if config.kind == "random_frozen" or config.pretrain_steps == 0:
        logger.info(f"Provider kind={config.kind}: keeping random initialization")
        return provider.freeze()

    sequences = _framed_ids(provider, pairs)
    rng = derive_rng(seed, "provider-pretrain")
    optimizer = Adam(
        provider.trainable_parameters(),
        InverseSqrtSchedule(config.max_lr, WARMUP_INIT_LR, config.warmup_updates),
    )
    provider.train()
    running = []
    for step in tqdm(range(1, config.pretrain_steps + 1), desc="pretrain-provider"):
        chosen = rng.integers(0, len(sequences), size=config.batch_size)
        ids, valid = _collate_pieces([sequences[i] for i in chosen], tokenizer.pad_id)
        inputs, selected = mask_pieces(ids, tokenizer, rng, config.mask_prob)
        with recording():
            loss = masked_piece_loss(provider, inputs, valid, ids, selected)
            backward(loss)
        lr = optimizer.step()
        optimizer.zero_grad()
        running.append(loss.item())
        if step % 100 == 0:
            logger.info(f"provider step {step}: mlm_loss={np.mean(running):.4f} lr={lr:.2e}")
            running = []
    return provider.freeze()


def masked_piece_accuracy(
    provider: ContextProvider,
    pairs: Sequence[SourcePair],
    seed: int,
    batch_size: int = 64,
) -> float:
    """Share of masked pieces recovered exactly; every selected piece is replaced by MASK."""
    tokenizer = provider.tokenizer
    sequences = _framed_ids(provider, pairs)
    rng = derive_rng(seed, "provider-eval")
    correct = total = 0
    with no_grad():
        for start in range(0, len(sequences), batch_size):
            ids, valid = _collate_pieces(sequences[start : start + batch_size], tokenizer.pad_id)
            inputs, selected = mask_pieces(ids, tokenizer, rng, provider.config.mask_prob, corrupt=False)
            logits = provider.mlm_head.forward(provider.hidden(inputs, valid)).values
            predicted = logits.argmax(axis=-1)
            correct += int((predicted[selected] == ids[selected]).sum())
            total += int(selected.sum())
    return correct / max(total, 1)

"""Token-count batching with length-sorted buckets."""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from src.data.synthetic import ParallelCorpus
from src.data.vocab import WordVocabulary
from src.provider.output import ProviderBatch, ProviderOutput, collate_provider

logger = logging.getLogger(__name__)


@dataclass
class EncodedSplit:
    """One corpus split as id arrays, with provider states cached once per sentence."""
    src: List[np.ndarray]
    tgt: List[np.ndarray]
    provider: Optional[List[ProviderOutput]] = None

    def __len__(self) -> int:
        return len(self.src)

    def with_provider(self, outputs: List[ProviderOutput]) -> "EncodedSplit":
        if len(outputs) != len(self.src):
            raise ValueError(f"{len(outputs)} provider outputs for {len(self.src)} sentences")
        return EncodedSplit(self.src, self.tgt, list(outputs))

    def subset(self, n: int) -> "EncodedSplit":
        return EncodedSplit(self.src[:n], self.tgt[:n], None if self.provider is None else self.provider[:n])


@dataclass
class Batch:
    indices: np.ndarray
    src: np.ndarray
    src_mask: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray
    provider: Optional[ProviderBatch] = None

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def num_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def encode_split(corpus: ParallelCorpus, src_vocab: WordVocabulary, tgt_vocab: WordVocabulary) -> EncodedSplit:
    return EncodedSplit(
        src=[src_vocab.tokenize(s).ids for s in corpus.src],
        tgt=[tgt_vocab.tokenize(t).ids for t in corpus.tgt],
    )


def _pad(rows: List[np.ndarray], pad_id: int) -> np.ndarray:
    longest = max(len(r) for r in rows)
    out = np.full((len(rows), longest), pad_id, dtype=np.int64)
    for n, r in enumerate(rows):
        out[n, : len(r)] = r
    return out


def collate(split: EncodedSplit, indices, vocab: WordVocabulary) -> Batch:
    """Decoder input is BOS + y, decoder output is y + EOS."""
    indices = np.asarray(indices, dtype=np.int64)
    src = _pad([split.src[i] for i in indices], vocab.pad_id)
    tgt_in = _pad([np.concatenate([[vocab.bos_id], split.tgt[i]]) for i in indices], vocab.pad_id)
    tgt_out = _pad([np.concatenate([split.tgt[i], [vocab.eos_id]]) for i in indices], vocab.pad_id)
    provider = None
    if split.provider is not None:
        provider = collate_provider([split.provider[i] for i in indices])
    return Batch(
        indices=indices,
        src=src,
        src_mask=src != vocab.pad_id,
        tgt_in=tgt_in,
        tgt_out=tgt_out,
        tgt_mask=tgt_out != vocab.pad_id,
        provider=provider,
    )


def make_batches(split: EncodedSplit, batch_tokens: int, rng: Optional[np.random.Generator] = None) -> List[np.ndarray]:
    """
    Group sentence indices so that (count x longest side) stays within
    `batch_tokens`. Sentences are sorted by length first; `rng` shuffles the
    order of the resulting batches.
    """
    lengths = [(max(len(s), len(t) + 1), len(s), n) for n, (s, t) in enumerate(zip(split.src, split.tgt))]
    batches, current, longest = [], [], 0
    for size, _, n in sorted(lengths):
        if current and max(longest, size) * (len(current) + 1) > batch_tokens:
            batches.append(np.array(current, dtype=np.int64))
            current, longest = [], 0
        current.append(n)
        longest = max(longest, size)
    if current:
        batches.append(np.array(current, dtype=np.int64))
    if rng is not None:
        order = rng.permutation(len(batches))
        batches = [batches[i] for i in order]
    logger.debug(f"{len(split)} sentences in {len(batches)} batches of <= {batch_tokens} tokens")
    return batches


@dataclass
class PreparedCorpus:
    """Vocabularies plus every split encoded for training and decoding."""
    src_vocab: WordVocabulary
    tgt_vocab: WordVocabulary
    splits: Dict[str, EncodedSplit]
    corpus: Dict[str, ParallelCorpus]

    def split(self, name: str) -> EncodedSplit:
        return self.splits[name]

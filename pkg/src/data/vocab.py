"""Token tables for the translation model (whole words) and id sequences."""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.config import BOS, EOS, PAD, UNK

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TokenSequence:
    """Integer ids plus the surface pieces they came from.

    `word_index[k]` is the index of the source word that produced piece k, or
    -1 for framing tokens.
    """
    ids: np.ndarray
    pieces: Tuple[str, ...]
    word_index: Tuple[int, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.ids)


class Vocabulary:
    """Bidirectional token <-> id table whose first entries are the specials."""

    SPECIALS: Tuple[str, ...] = ()
    UNK_TOKEN: str = ""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(self.SPECIALS)]) != self.SPECIALS:
            tokens = list(self.SPECIALS) + [t for t in tokens if t not in self.SPECIALS]
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")
        self.tokens: List[str] = tokens
        self.index: Dict[str, int] = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return type(self) is type(other) and self.tokens == other.tokens

    def id_of(self, token: str) -> int:
        return self.index.get(token, self.index[self.UNK_TOKEN])

    def token_of(self, i: int) -> str:
        return self.tokens[int(i)]

    @property
    def num_specials(self) -> int:
        return len(self.SPECIALS)

    @property
    def unk_id(self) -> int:
        return self.index[self.UNK_TOKEN]

    def save(self, path: str):
        with open(path, "w") as f:
            f.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path: str):
        with open(path, "r") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])


class WordVocabulary(Vocabulary):
    SPECIALS = (PAD, BOS, EOS, UNK)
    UNK_TOKEN = UNK

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def bos_id(self) -> int:
        return self.index[BOS]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    def tokenize(self, sentence: str) -> TokenSequence:
        words = sentence.split()
        ids = np.array([self.id_of(w) for w in words], dtype=np.int64)
        return TokenSequence(ids=ids, pieces=tuple(words), word_index=tuple(range(len(words))))

    def detokenize(self, ids: Iterable[int]) -> str:
        """Join word ids, stopping at EOS and skipping PAD/BOS."""
        words = []
        for i in ids:
            i = int(i)
            if i == self.eos_id:
                break
            if i in (self.pad_id, self.bos_id):
                continue
            words.append(self.tokens[i])
        return " ".join(words)


def _sentences(corpus, side: str) -> List[str]:
    if isinstance(corpus, (list, tuple)):
        return list(corpus)
    if side == "source":
        return list(corpus.src)
    if side == "target":
        return list(corpus.tgt)
    if side == "provider":
        return list(corpus.src) + [s for s in corpus.prev if s]
    raise ValueError(f"unknown vocabulary side '{side}'")


def build_vocab(corpus, side: str, words: Optional[Iterable[str]] = None):
    """
    Build the table for one side of a parallel corpus.

    Args:
        corpus: a ParallelCorpus or a plain list of sentences
        side: 'source' or 'target' (whole words) or 'provider' (character pieces)
        words: extra words to include even if the corpus never shows them

    Returns:
        WordVocabulary for the NMT sides, PieceTokenizer for the provider side
    """
    sentences = _sentences(corpus, side)
    if not sentences:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if side == "provider":
        from src.provider.tokenizer import PieceTokenizer
        return PieceTokenizer.build(sentences + [" ".join(words or [])])
    seen = {w for s in sentences for w in s.split()}
    seen.update(words or [])
    vocab = WordVocabulary(sorted(seen))
    logger.debug(f"{side} vocabulary: {len(vocab)} entries")
    return vocab

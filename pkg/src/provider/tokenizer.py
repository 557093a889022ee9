"""Character-piece tokenizer for the context provider."""
import logging
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.config import CLS, CONTINUATION, MASK, PIECE_PAD, PIECE_UNK, SEP
from src.data.vocab import TokenSequence, Vocabulary

logger = logging.getLogger(__name__)


class PieceTokenizer(Vocabulary):
    """
    Greedy longest-match segmentation over a piece table.

    A word-initial piece is stored bare, later pieces carry the ``##`` prefix.
    Characters no piece covers become one UNK each.
    """

    SPECIALS = (PIECE_PAD, PIECE_UNK, CLS, SEP, MASK)
    UNK_TOKEN = PIECE_UNK

    def __init__(self, tokens: Sequence[str]):
        super().__init__(tokens)
        pieces = [t for t in self.tokens[self.num_specials :]]
        self.max_piece = max((len(p) - len(CONTINUATION) if p.startswith(CONTINUATION) else len(p) for p in pieces), default=1)

    @classmethod
    def build(cls, sentences: Iterable[str]) -> "PieceTokenizer":
        pieces = set()
        for sentence in sentences:
            for word in sentence.split():
                for k, ch in enumerate(word):
                    pieces.add(ch if k == 0 else CONTINUATION + ch)
        return cls(sorted(pieces))

    @property
    def pad_id(self) -> int:
        return self.index[PIECE_PAD]

    @property
    def cls_id(self) -> int:
        return self.index[CLS]

    @property
    def sep_id(self) -> int:
        return self.index[SEP]

    @property
    def mask_id(self) -> int:
        return self.index[MASK]

    @property
    def piece_ids(self) -> np.ndarray:
        """Ids of ordinary (non-special) pieces."""
        return np.arange(self.num_specials, len(self.tokens))

    def _split_word(self, word: str) -> List[Tuple[int, str]]:
        out, i = [], 0
        while i < len(word):
            for j in range(min(len(word), i + self.max_piece), i, -1):
                piece = word[i:j] if i == 0 else CONTINUATION + word[i:j]
                if piece in self.index:
                    out.append((self.index[piece], piece))
                    i = j
                    break
            else:
                out.append((self.unk_id, PIECE_UNK))
                i += 1
        return out

    def tokenize(self, text: str) -> TokenSequence:
        ids, pieces, words = [], [], []
        for w, word in enumerate(text.split()):
            for i, piece in self._split_word(word):
                ids.append(i)
                pieces.append(piece)
                words.append(w)
        return TokenSequence(ids=np.array(ids, dtype=np.int64), pieces=tuple(pieces), word_index=tuple(words))

    def detokenize(self, ids: Iterable[int]) -> str:
        words: List[str] = []
        for i in ids:
            token = self.tokens[int(i)]
            if token in (PIECE_PAD, CLS, SEP):
                continue
            if token.startswith(CONTINUATION) and words:
                words[-1] += token[len(CONTINUATION) :]
            else:
                words.append(token)
        return " ".join(words)

    def frame(self, x: str, x_prev: Optional[str] = None) -> Tuple[TokenSequence, Tuple[int, int]]:
        """
        (CLS, x, SEP) or, with a preceding sentence, (CLS, x_prev, SEP, x, SEP).

        Returns the framed sequence and the [start, end) span of x's pieces.
        """
        body = self.tokenize(x)
        head_ids, head_pieces, head_words = [self.cls_id], [CLS], [-1]
        if x_prev is not None:
            prev = self.tokenize(x_prev)
            head_ids += list(prev.ids) + [self.sep_id]
            head_pieces += list(prev.pieces) + [SEP]
            head_words += [-1] * (len(prev) + 1)
        start = len(head_ids)
        ids = np.array(head_ids + list(body.ids) + [self.sep_id], dtype=np.int64)
        sequence = TokenSequence(
            ids=ids,
            pieces=tuple(head_pieces) + body.pieces + (SEP,),
            word_index=tuple(head_words) + body.word_index + (-1,),
        )
        return sequence, (start, start + len(body))

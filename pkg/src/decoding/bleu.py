"""Corpus BLEU and exact-match accuracy on whitespace tokens."""
import math
from collections import Counter
from typing import List, Sequence, Union

from src.errors import DecodingError

BLEU_IMPL = "internal-corpus-bleu"
BLEU_TOKENIZATION = "word"

Sentence = Union[str, Sequence[str]]


def _tokens(sentence: Sentence) -> List[str]:
    return sentence.split() if isinstance(sentence, str) else list(sentence)


def _ngrams(tokens: List[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) + 1 - n))


def _check_corpora(hypotheses, references):
    if not hypotheses or not references:
        raise DecodingError("cannot score an empty corpus")
    if len(hypotheses) != len(references):
        raise DecodingError(f"{len(hypotheses)} hypotheses for {len(references)} references")


def corpus_bleu(hypotheses: Sequence[Sentence], references: Sequence[Sentence], max_n: int = 4) -> float:
    """
    Corpus-level BLEU in [0, 100]: clipped n-gram counts are summed over the
    corpus before taking precisions, so no smoothing is applied; a single
    n-gram order with zero matches gives 0.
    """
    _check_corpora(hypotheses, references)
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = _tokens(hyp), _tokens(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            totals[n - 1] += sum(hyp_counts.values())
    if hyp_len == 0 or min(matches) == 0:
        return 0.0
    log_precision = math.fsum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * math.exp(log_precision)


def sequence_accuracy(hypotheses: Sequence[Sentence], references: Sequence[Sentence]) -> float:
    _check_corpora(hypotheses, references)
    return sum(_tokens(h) == _tokens(r) for h, r in zip(hypotheses, references)) / len(references)

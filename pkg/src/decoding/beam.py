"""
Beam search with a finished-hypothesis pool and GNMT length penalty.

The search is model-agnostic: `step_fn` maps a list of generated prefixes
(BOS excluded, all of equal length) to an [N, V] array of next-token
log-probabilities.
"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from src.errors import DecodingError

logger = logging.getLogger(__name__)

StepFn = Callable[[List[Tuple[int, ...]]], np.ndarray]


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


@dataclass(frozen=True)
class Hypothesis:
    """Generated tokens (EOS included when finished) and their total log-probability."""
    tokens: Tuple[int, ...]
    logprob: float
    finished: bool
    alpha: float = 0.0

    @property
    def score(self) -> float:
        return self.logprob / length_penalty(len(self.tokens), self.alpha)

    def rank_key(self):
        return (-self.score, len(self.tokens), self.tokens)


def _check(width: int, alpha: float, max_len: int):
    if width < 1:
        raise DecodingError(f"beam width must be >= 1, got {width}")
    if alpha < 0:
        raise DecodingError(f"length penalty alpha must be >= 0, got {alpha}")
    if max_len < 1:
        raise DecodingError(f"max_len must be >= 1, got {max_len}")


def _scores(step_fn: StepFn, prefixes: List[Tuple[int, ...]], banned: Sequence[int]) -> np.ndarray:
    logprobs = np.array(step_fn(prefixes), dtype=np.float64)
    if logprobs.ndim != 2 or logprobs.shape[0] != len(prefixes):
        raise DecodingError(f"step function returned shape {logprobs.shape} for {len(prefixes)} prefixes")
    if banned:
        logprobs[:, list(banned)] = -np.inf
    return logprobs


def beam_search(
    step_fn: StepFn,
    eos_id: int,
    width: int,
    alpha: float,
    max_len: int,
    banned: Sequence[int] = (),
) -> Hypothesis:
    """
    Keep the `width` best unfinished prefixes per step. An EOS extension joins
    the finished pool when it ranks among the step's `width` best candidates.
    The search stops once `width` hypotheses have finished, when no unfinished
    prefix can still beat the best finished score, or after `max_len` tokens.

    Final ranking: logP / ((5 + len) / 6)^alpha, ties to the shorter, then the
    lexicographically smaller token sequence. When nothing finished, the best
    unfinished hypothesis is returned with finished=False.
    """
    _check(width, alpha, max_len)
    alive = [Hypothesis((), 0.0, False, alpha)]
    finished: List[Hypothesis] = []
    for _ in range(max_len):
        logprobs = _scores(step_fn, [h.tokens for h in alive], banned)
        candidates = []
        for n, hyp in enumerate(alive):
            for token in np.nonzero(np.isfinite(logprobs[n]))[0]:
                token = int(token)
                candidates.append((hyp.logprob + logprobs[n, token], hyp.tokens + (token,)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        for logprob, tokens in candidates[:width]:
            if tokens[-1] == eos_id:
                finished.append(Hypothesis(tokens, logprob, True, alpha))
        alive = [Hypothesis(tokens, logprob, False, alpha) for logprob, tokens in candidates if tokens[-1] != eos_id]
        alive = alive[:width]
        if len(finished) >= width or not alive:
            break
        if finished:
            best = min(finished, key=Hypothesis.rank_key).score
            bound = max(h.logprob for h in alive) / length_penalty(max_len, alpha)
            if best >= bound:
                break

    if finished:
        return min(finished, key=Hypothesis.rank_key)
    if not alive:
        raise DecodingError("beam search found no hypothesis with finite probability")
    logger.debug(f"no hypothesis finished within {max_len} tokens; returning the best unfinished one")
    return min(alive, key=Hypothesis.rank_key)


def greedy_decode(step_fn: StepFn, eos_id: int, max_len: int, banned: Sequence[int] = ()) -> Hypothesis:
    """Follow the most probable token until EOS or `max_len` tokens."""
    _check(1, 0.0, max_len)
    tokens: Tuple[int, ...] = ()
    logprob = 0.0
    for _ in range(max_len):
        totals = logprob + _scores(step_fn, [tokens], banned)[0]
        if not np.isfinite(totals).any():
            break
        token = int(np.argmax(totals))
        tokens, logprob = tokens + (token,), float(totals[token])
        if token == eos_id:
            return Hypothesis(tokens, logprob, True)
    if not tokens:
        raise DecodingError("greedy decoding found no token with finite probability")
    return Hypothesis(tokens, logprob, False)

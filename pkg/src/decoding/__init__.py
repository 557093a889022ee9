from .beam import Hypothesis, beam_search, greedy_decode, length_penalty
from .bleu import corpus_bleu, sequence_accuracy
from .timing import TimingReport, timing_harness

__all__ = [
    "Hypothesis",
    "TimingReport",
    "beam_search",
    "corpus_bleu",
    "greedy_decode",
    "length_penalty",
    "sequence_accuracy",
    "timing_harness",
]

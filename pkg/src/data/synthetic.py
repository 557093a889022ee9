"""
Deterministic synthetic parallel corpora.

Every word of the toy language has four letters: a first-syllable letter from
a-m, its uppercase twin, a second-syllable letter from n-z and its uppercase
twin (``aAnN``, ``bBoO``, ...). The translation model sees whole words, the
provider sees characters, so the provider sequence is always longer than the
word sequence, and any single masked character can be recovered from its twin.
"""
import hashlib
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from src.config import TASK_SPEC_FILE, SyntheticTaskSpec, dump_task_spec, load_task_spec
from src.errors import ConfigError
from src.utils.rng import derive_rng

logger = logging.getLogger(__name__)

FIRST = "abcdefghijklm"
SECOND = "nopqrstuvwxyz"
MAX_WORDS = len(FIRST) * len(SECOND)
SPLITS = ("train", "valid", "test")

# Reserved lexicon slots for context_disambiguation
MARKER_1, MARKER_2, AMBIGUOUS, RENDER_1, RENDER_2 = range(5)
DISAMBIGUATION_RESERVED = 5


def lexicon(size: int) -> List[str]:
    """The first `size` words of the toy language, in a fixed order."""
    if not 1 <= size <= MAX_WORDS:
        raise ConfigError(f"lexicon size must be within [1, {MAX_WORDS}], got {size}")
    words = []
    for i in range(size):
        a = FIRST[i % len(FIRST)]
        b = SECOND[(i // len(FIRST) + i) % len(SECOND)]
        words.append(a + a.upper() + b + b.upper())
    return words


@dataclass
class ParallelCorpus:
    src: List[str] = field(default_factory=list)
    tgt: List[str] = field(default_factory=list)
    prev: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.src)

    def subset(self, n: int) -> "ParallelCorpus":
        return ParallelCorpus(self.src[:n], self.tgt[:n], self.prev[:n])


@dataclass(frozen=True)
class RuleTable:
    """Marker in the preceding sentence -> rendering of the ambiguous word."""
    ambiguous: str
    renderings: Dict[str, str]


def rule_table(spec: SyntheticTaskSpec) -> RuleTable:
    words = lexicon(spec.vocab_size)
    return RuleTable(
        ambiguous=words[AMBIGUOUS],
        renderings={words[MARKER_1]: words[RENDER_1], words[MARKER_2]: words[RENDER_2]},
    )


def content_words(spec: SyntheticTaskSpec) -> List[str]:
    words = lexicon(spec.vocab_size)
    if spec.task == "context_disambiguation":
        return words[DISAMBIGUATION_RESERVED:]
    return words


def substitution(spec: SyntheticTaskSpec) -> Dict[str, str]:
    """Fixed bijection over the lexicon, a pure function of the seed."""
    words = lexicon(spec.vocab_size)
    order = derive_rng(spec.seed, "data:substitute").permutation(len(words))
    return {w: words[j] for w, j in zip(words, order)}


def _sentence(rng: np.random.Generator, words: List[str], spec: SyntheticTaskSpec) -> List[str]:
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    return [words[j] for j in rng.integers(0, len(words), size=length)]


def _generate_split(spec: SyntheticTaskSpec, split: str, size: int) -> ParallelCorpus:
    rng = derive_rng(spec.seed, f"data:{split}")
    words = content_words(spec)
    mapping = substitution(spec) if spec.task == "substitute" else None
    rules = rule_table(spec) if spec.task == "context_disambiguation" else None
    corpus = ParallelCorpus()
    for _ in range(size):
        prev = _sentence(rng, words, spec)
        src = _sentence(rng, words, spec)
        if spec.task == "copy":
            tgt = list(src)
        elif spec.task == "reverse":
            tgt = src[::-1]
        elif spec.task == "substitute":
            tgt = [mapping[w] for w in src]
        else:
            markers = sorted(rules.renderings)
            marker = markers[int(rng.integers(0, 2))]
            prev[int(rng.integers(0, len(prev)))] = marker
            src[int(rng.integers(0, len(src)))] = rules.ambiguous
            tgt = [rules.renderings[marker] if w == rules.ambiguous else w for w in src]
        corpus.src.append(" ".join(src))
        corpus.tgt.append(" ".join(tgt))
        corpus.prev.append(" ".join(prev))
    return corpus


def generate(spec: SyntheticTaskSpec) -> Dict[str, ParallelCorpus]:
    """Generate train/valid/test splits; the result is a pure function of `spec`."""
    if spec.min_len > spec.max_len:
        raise ConfigError(f"length range is inverted: min_len={spec.min_len} > max_len={spec.max_len}")
    if spec.task == "context_disambiguation" and spec.vocab_size <= DISAMBIGUATION_RESERVED:
        raise ConfigError(
            f"context_disambiguation needs more than {DISAMBIGUATION_RESERVED} words, got vocab_size={spec.vocab_size}"
        )
    sizes = {"train": spec.train_size, "valid": spec.valid_size, "test": spec.test_size}
    splits = {split: _generate_split(spec, split, sizes[split]) for split in SPLITS}
    logger.info(f"Generated {spec.task} corpus: " + ", ".join(f"{s}={len(c)}" for s, c in splits.items()))
    return splits


def rule_violations(corpus: ParallelCorpus, spec: SyntheticTaskSpec) -> int:
    """Count sentences whose ambiguous-word rendering disagrees with the rule table."""
    rules = rule_table(spec)
    violations = 0
    for src, tgt, prev in zip(corpus.src, corpus.tgt, corpus.prev):
        markers = [w for w in prev.split() if w in rules.renderings]
        if len(markers) != 1:
            violations += 1
            continue
        expected = rules.renderings[markers[0]]
        for s, t in zip(src.split(), tgt.split()):
            if s == rules.ambiguous and t != expected:
                violations += 1
                break
    return violations


def ambiguous_positions(corpus: ParallelCorpus, spec: SyntheticTaskSpec) -> List[Tuple[int, int]]:
    """(sentence, word) coordinates of every ambiguous source word."""
    rules = rule_table(spec)
    return [
        (n, i)
        for n, src in enumerate(corpus.src)
        for i, w in enumerate(src.split())
        if w == rules.ambiguous
    ]


def ambiguous_accuracy(hypotheses: List[str], corpus: ParallelCorpus, spec: SyntheticTaskSpec) -> float:
    """Fraction of ambiguous positions rendered correctly in `hypotheses`."""
    positions = ambiguous_positions(corpus, spec)
    if not positions:
        return 0.0
    correct = 0
    for n, i in positions:
        hyp = hypotheses[n].split()
        ref = corpus.tgt[n].split()
        correct += int(i < len(hyp) and hyp[i] == ref[i])
    return correct / len(positions)


def majority_baseline_accuracy(train: ParallelCorpus, test: ParallelCorpus, spec: SyntheticTaskSpec) -> float:
    """Accuracy on ambiguous test positions of always emitting the most frequent training rendering."""
    counts = Counter(train.tgt[n].split()[i] for n, i in ambiguous_positions(train, spec))
    if not counts:
        return 0.0
    majority = min(counts, key=lambda w: (-counts[w], w))
    positions = ambiguous_positions(test, spec)
    return sum(test.tgt[n].split()[i] == majority for n, i in positions) / max(len(positions), 1)


# --- files ---

def write_corpus(splits: Dict[str, ParallelCorpus], spec: SyntheticTaskSpec, out_dir: str) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for split, corpus in splits.items():
        for suffix, lines in (("src", corpus.src), ("tgt", corpus.tgt), ("prev", corpus.prev)):
            path = os.path.join(out_dir, f"{split}.{suffix}")
            with open(path, "w") as f:
                f.write("".join(line + "\n" for line in lines))
            written.append(path)
    spec_path = os.path.join(out_dir, TASK_SPEC_FILE)
    with open(spec_path, "w") as f:
        f.write(dump_task_spec(spec))
    written.append(spec_path)
    logger.info(f"Wrote corpus to {out_dir}")
    return written


def read_corpus(data_dir: str) -> Tuple[Dict[str, ParallelCorpus], SyntheticTaskSpec]:
    spec_path = os.path.join(data_dir, TASK_SPEC_FILE)
    if not os.path.exists(spec_path):
        raise ConfigError(f"{data_dir} does not contain a generated corpus ({TASK_SPEC_FILE} missing)")
    spec = load_task_spec(spec_path)
    splits = {}
    for split in SPLITS:
        columns = {}
        for suffix in ("src", "tgt", "prev"):
            path = os.path.join(data_dir, f"{split}.{suffix}")
            if not os.path.exists(path):
                raise ConfigError(f"corpus file {path} is missing")
            with open(path, "r") as f:
                columns[suffix] = [line.rstrip("\n") for line in f]
        splits[split] = ParallelCorpus(columns["src"], columns["tgt"], columns["prev"])
    return splits, spec


def corpus_digest(splits: Dict[str, ParallelCorpus]) -> str:
    digest = hashlib.sha256()
    for split in SPLITS:
        corpus = splits[split]
        for line in (*corpus.src, *corpus.tgt, *corpus.prev):
            digest.update(line.encode("utf-8") + b"\n")
    return digest.hexdigest()

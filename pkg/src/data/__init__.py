from .synthetic import ParallelCorpus, generate, lexicon, read_corpus, write_corpus
from .vocab import TokenSequence, WordVocabulary, build_vocab

__all__ = [
    "ParallelCorpus",
    "TokenSequence",
    "WordVocabulary",
    "build_vocab",
    "generate",
    "lexicon",
    "read_corpus",
    "write_corpus",
]

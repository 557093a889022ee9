"""Corpus decoding with a trained model."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from src.config import DecodeConfig
from src.data.batching import EncodedSplit, collate
from src.data.vocab import WordVocabulary
from src.decoding.beam import Hypothesis, beam_search
from src.model.fused import FusedModel
from src.provider.output import ProviderOutput, collate_provider
from src.tensor import no_grad

logger = logging.getLogger(__name__)


class Translator:
    def __init__(self, model: FusedModel, tgt_vocab: WordVocabulary, config: DecodeConfig):
        self.model = model
        self.vocab = tgt_vocab
        self.config = config

    def translate_ids(self, src_ids: np.ndarray, provider: Optional[ProviderOutput] = None) -> Hypothesis:
        model = self.model.eval()
        src = np.asarray(src_ids, dtype=np.int64)[None, :]
        provider_batch = collate_provider([provider]) if provider is not None else None
        with no_grad():
            enc = model.encode(src, np.ones(src.shape, dtype=bool), provider_batch)
        bos = self.vocab.bos_id

        def step_fn(prefixes):
            rows = len(prefixes)
            prefix = np.array([[bos, *p] for p in prefixes], dtype=np.int64).reshape(rows, -1)
            index = np.zeros(rows, dtype=np.int64)
            repeated = provider_batch.repeat([rows]) if provider_batch is not None else None
            return model.next_log_probs(prefix, enc.select(index), repeated)

        return beam_search(
            step_fn,
            eos_id=self.vocab.eos_id,
            width=self.config.beam,
            alpha=self.config.alpha,
            max_len=src.shape[1] + self.config.max_len_offset,
            banned=(self.vocab.pad_id, self.vocab.bos_id),
        )

    def translate_split(self, split: EncodedSplit, workers: int = 1, progress: bool = False) -> List[Hypothesis]:
        """Decode every sentence; sentences fan out over threads sharing the read-only model."""
        providers = split.provider if split.provider is not None else [None] * len(split)
        jobs = list(zip(split.src, providers))
        if workers <= 1:
            return [self.translate_ids(s, p) for s, p in tqdm(jobs, desc="decode", disable=not progress)]
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(lambda job: self.translate_ids(*job), jobs))

    def detokenize(self, hypothesis: Hypothesis) -> str:
        return self.vocab.detokenize(hypothesis.tokens)

    def greedy_translate(self, split: EncodedSplit, batch_size: int = 64) -> List[str]:
        """Batched greedy decoding for quick validation metrics."""
        model = self.model.eval()
        vocab = self.vocab
        outputs: List[str] = []
        for start in range(0, len(split), batch_size):
            batch = collate(split, np.arange(start, min(start + batch_size, len(split))), vocab)
            with no_grad():
                enc = model.encode(batch.src, batch.src_mask, batch.provider)
            rows = batch.size
            prefix = np.full((rows, 1), vocab.bos_id, dtype=np.int64)
            tokens = [[] for _ in range(rows)]
            done = np.zeros(rows, dtype=bool)
            for _ in range(batch.src.shape[1] + self.config.max_len_offset):
                logprobs = model.next_log_probs(prefix, enc, batch.provider)
                logprobs[:, [vocab.pad_id, vocab.bos_id]] = -np.inf
                chosen = logprobs.argmax(axis=1)
                for r in np.nonzero(~done)[0]:
                    tokens[r].append(int(chosen[r]))
                done |= chosen == vocab.eos_id
                if done.all():
                    break
                prefix = np.concatenate([prefix, chosen[:, None]], axis=1)
            outputs.extend(vocab.detokenize(t) for t in tokens)
        return outputs

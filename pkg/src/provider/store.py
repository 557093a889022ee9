"""Provider checkpoints and the NMT-encoder provider."""
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import FusedModelConfig, ProviderConfig
from src.data.vocab import WordVocabulary
from src.errors import CheckpointError, ConfigError
from src.model.fused import FusedModel
from src.provider.encoder import ContextProvider
from src.provider.output import ProviderOutput
from src.provider.tokenizer import PieceTokenizer
from src.tensor import no_grad
from src.utils.container import read_container, write_container

logger = logging.getLogger(__name__)

PROVIDER_FORMAT = "provider"


class NmtEncoderProvider:
    """
    The frozen encoder of a separately trained translation model, used as the
    provider. It reads NMT word tokens, so it only supports sentence mode.
    """

    kind = "nmt_encoder"

    def __init__(self, model: FusedModel, src_vocab: WordVocabulary):
        if model.uses_provider:
            raise ConfigError("an nmt_encoder provider must wrap a model without provider inputs")
        self.model = model.freeze()
        self.src_vocab = src_vocab
        self.config = ProviderConfig(kind="nmt_encoder", d_model=model.config.d_model, heads=1)

    @property
    def width(self) -> int:
        return self.model.config.d_model

    def parameters(self):
        return self.model.parameters()

    def state_dict(self):
        return self.model.state_dict()

    def encode(self, x: str, mode: str = "sentence", x_prev: Optional[str] = None) -> ProviderOutput:
        return self.encode_many([(x, x_prev)], mode)[0]

    def encode_many(self, pairs: Sequence[Tuple[str, Optional[str]]], mode: str = "sentence", progress: bool = False) -> List[ProviderOutput]:
        if mode != "sentence":
            raise ConfigError("the nmt_encoder provider only supports sentence mode")
        outputs = []
        with no_grad():
            for x, _ in pairs:
                ids = self.src_vocab.tokenize(x).ids
                if len(ids) == 0:
                    raise ValueError("cannot encode an empty sentence")
                enc = self.model.encode(ids[None, :], np.ones((1, len(ids)), dtype=bool))
                states = enc.output.values[0].copy()
                outputs.append(ProviderOutput(states=states, mask=np.ones(len(ids), dtype=bool), x_span=(0, len(ids))))
        return outputs

    def encode_corpus(self, corpus, mode: str = "sentence", progress: bool = False) -> List[ProviderOutput]:
        return self.encode_many([(x, None) for x in corpus.src], mode, progress)


Provider = Union[ContextProvider, NmtEncoderProvider]


def save_provider(provider: Provider, path: str) -> str:
    metadata = {"format": PROVIDER_FORMAT, "kind": provider.kind}
    if isinstance(provider, NmtEncoderProvider):
        metadata["model_config"] = provider.model.config.model_dump()
        metadata["vocabulary"] = provider.src_vocab.tokens
    else:
        metadata["config"] = provider.config.model_dump()
        metadata["vocabulary"] = provider.tokenizer.tokens
    write_container(path, provider.state_dict(), metadata)
    logger.info(f"Saved {provider.kind} provider to {path}")
    return path


def load_provider(path: str) -> Provider:
    """
    Raises:
        CheckpointError: missing or corrupt file (with checksum report), or a
            container that does not hold a provider
    """
    arrays, metadata = read_container(path)
    if metadata.get("format") != PROVIDER_FORMAT:
        raise CheckpointError(f"{path} is not a provider checkpoint (format={metadata.get('format')!r})")
    if metadata["kind"] == "nmt_encoder":
        model = FusedModel(FusedModelConfig.model_validate(metadata["model_config"]))
        model.load_state_dict(arrays)
        return NmtEncoderProvider(model, WordVocabulary(metadata["vocabulary"]))
    provider = ContextProvider(PieceTokenizer(metadata["vocabulary"]), ProviderConfig.model_validate(metadata["config"]))
    provider.load_state_dict(arrays)
    return provider.freeze()

"""Variant names to layer wiring.

Variants compose with '+', e.g. ``stacked_decoder+drop_enc_attnB``.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

from src.config import VARIANTS
from src.errors import ConfigError

# Variants that describe a whole model and cannot be combined with anything.
STANDALONE = ("full", "no_provider_baseline", "embedding_feed")

CONTRADICTIONS = {
    frozenset({"stacked_decoder", "drop_dec_attnB"}): "stacked_decoder needs the provider-decoder attention",
    frozenset({"linear_feed", "drop_enc_attnB"}): "linear_feed replaces the provider-encoder attention it would drop",
    frozenset({"drop_enc_attnB", "drop_dec_attnB"}): "dropping both provider attentions is no_provider_baseline",
}


@dataclass(frozen=True)
class Wiring:
    variant: str
    # "attn" (attention over provider states), "linear" (per-position projection) or None
    enc_branch: Optional[str] = "attn"
    # "parallel" (averaged with encoder attention), "stacked" (sequential) or None
    dec_branch: Optional[str] = "parallel"
    # "words" (token embeddings) or "provider" (projected provider states)
    enc_embed: str = "words"

    @property
    def uses_provider(self) -> bool:
        return self.enc_branch is not None or self.dec_branch is not None or self.enc_embed == "provider"

    @property
    def fused(self) -> bool:
        return self.enc_branch is not None or self.dec_branch is not None


def split_variant(variant: str) -> Tuple[str, ...]:
    parts = tuple(p.strip() for p in variant.split("+"))
    for part in parts:
        if part not in VARIANTS:
            raise ConfigError(f"unknown variant '{part}', expected one of {list(VARIANTS)}")
    if len(set(parts)) != len(parts):
        raise ConfigError(f"variant '{variant}' repeats a component")
    return parts


def resolve_wiring(variant: str) -> Wiring:
    parts = split_variant(variant)
    if len(parts) > 1:
        for part in parts:
            if part in STANDALONE:
                raise ConfigError(f"variant '{part}' cannot be combined with others (got '{variant}')")
        for pair, reason in CONTRADICTIONS.items():
            if pair <= set(parts):
                raise ConfigError(f"contradictory variant '{variant}': {reason}")

    if parts == ("no_provider_baseline",):
        return Wiring(variant, enc_branch=None, dec_branch=None)
    if parts == ("embedding_feed",):
        return Wiring(variant, enc_branch=None, dec_branch=None, enc_embed="provider")

    enc_branch, dec_branch = "attn", "parallel"
    if "linear_feed" in parts:
        enc_branch = "linear"
    if "drop_enc_attnB" in parts:
        enc_branch = None
    if "drop_dec_attnB" in parts:
        dec_branch = None
    if "stacked_decoder" in parts:
        dec_branch = "stacked"
    return Wiring(variant, enc_branch=enc_branch, dec_branch=dec_branch)

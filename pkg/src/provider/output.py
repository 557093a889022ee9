"""Provider states as consumed by the translation model."""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.tensor import Tensor, constant


@dataclass(frozen=True)
class ProviderOutput:
    """Last-layer provider states for one sentence.

    `x_span` is the [start, end) range of the pieces of the sentence being
    translated; framing tokens and the preceding sentence lie outside it.
    """
    states: np.ndarray
    mask: np.ndarray
    x_span: Tuple[int, int]

    @property
    def len_B(self) -> int:
        return int(self.states.shape[0])

    @property
    def width(self) -> int:
        return int(self.states.shape[1])

    def padded(self, extra: int) -> "ProviderOutput":
        """Append `extra` masked PAD positions."""
        states = np.concatenate([self.states, np.zeros((extra, self.width))], axis=0)
        mask = np.concatenate([self.mask, np.zeros(extra, dtype=bool)])
        return ProviderOutput(states=states, mask=mask, x_span=self.x_span)

    def aligned(self, length: int) -> np.ndarray:
        """States of the x segment truncated or zero-padded to `length` rows."""
        start, end = self.x_span
        segment = self.states[start:end][:length]
        if segment.shape[0] < length:
            segment = np.concatenate([segment, np.zeros((length - segment.shape[0], self.width))], axis=0)
        return segment


@dataclass
class ProviderBatch:
    states: Tensor
    mask: np.ndarray
    outputs: List[ProviderOutput]

    @property
    def width(self) -> int:
        return self.states.shape[-1]

    def aligned(self, length: int) -> Tensor:
        """[B, length, d_B] x-segment features, one row per source position."""
        return constant(np.stack([o.aligned(length) for o in self.outputs]))

    def repeat(self, counts: Sequence[int]) -> "ProviderBatch":
        """Row n repeated counts[n] times (beam expansion)."""
        index = np.repeat(np.arange(len(self.outputs)), counts)
        return ProviderBatch(
            states=constant(self.states.values[index]),
            mask=self.mask[index],
            outputs=[self.outputs[i] for i in index],
        )


def collate_provider(outputs: Sequence[ProviderOutput], width: Optional[int] = None) -> ProviderBatch:
    """Stack per-sentence outputs into a padded batch; PAD rows are zero and masked."""
    outputs = list(outputs)
    width = outputs[0].width if width is None else width
    longest = max(o.len_B for o in outputs)
    states = np.zeros((len(outputs), longest, width))
    mask = np.zeros((len(outputs), longest), dtype=bool)
    for n, o in enumerate(outputs):
        states[n, : o.len_B] = o.states
        mask[n, : o.len_B] = o.mask
    return ProviderBatch(states=constant(states), mask=mask, outputs=outputs)

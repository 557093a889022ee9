"""Inference-time comparison between a baseline and a fused model."""
import logging
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Callable, List

import pandas as pd

from src.errors import DecodingError

logger = logging.getLogger(__name__)

# Increase of fused over baseline decoding time reported for full-size systems; reference only.
REFERENCE_INCREASE_RANGE = (0.386, 0.493)


@dataclass(frozen=True)
class TimingReport:
    baseline_seconds: float
    fused_seconds: float
    repetitions: int

    @property
    def increase_ratio(self) -> float:
        return self.fused_seconds / self.baseline_seconds - 1.0

    def to_frame(self) -> pd.DataFrame:
        row = asdict(self)
        row["increase_ratio"] = self.increase_ratio
        row["reference_low"], row["reference_high"] = REFERENCE_INCREASE_RANGE
        return pd.DataFrame([row])

    def write_csv(self, path: str) -> str:
        self.to_frame().to_csv(path, index=False)
        return path


def median_seconds(
    run: Callable[[], object],
    repetitions: int,
    warmup: int = 1,
    clock: Callable[[], float] = time.perf_counter,
) -> float:
    if repetitions < 1:
        raise DecodingError(f"repetitions must be >= 1, got {repetitions}")
    for _ in range(warmup):
        run()
    samples: List[float] = []
    for _ in range(repetitions):
        start = clock()
        run()
        samples.append(clock() - start)
    return statistics.median(samples)


def timing_harness(
    run_baseline: Callable[[], object],
    run_fused: Callable[[], object],
    repetitions: int = 3,
    warmup: int = 1,
    clock: Callable[[], float] = time.perf_counter,
) -> TimingReport:
    """
    Median wall time of decoding the same test set with each model; warm-up
    runs are discarded. Both callables must use identical decoding settings.

    Raises:
        DecodingError: if either median is not positive
    """
    baseline = median_seconds(run_baseline, repetitions, warmup, clock)
    fused = median_seconds(run_fused, repetitions, warmup, clock)
    if baseline <= 0 or fused <= 0:
        raise DecodingError(f"nonpositive timing: baseline={baseline} fused={fused}")
    report = TimingReport(baseline_seconds=baseline, fused_seconds=fused, repetitions=repetitions)
    logger.info(
        f"Inference time: baseline={baseline:.3f}s fused={fused:.3f}s increase={100 * report.increase_ratio:.1f}%"
    )
    return report

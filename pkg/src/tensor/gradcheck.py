"""Central finite-difference gradient checker."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from src.errors import TrainingError
from src.tensor.core import Tensor, backward, no_grad, recording

logger = logging.getLogger(__name__)


@dataclass
class GradCheckEntry:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float
    abs_error: float


@dataclass
class GradCheckReport:
    tol: float
    atol: float
    entries: List[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error for e in self.entries), default=0.0)

    @property
    def failures(self) -> List[GradCheckEntry]:
        return [e for e in self.entries if e.rel_error > self.tol and e.abs_error > self.atol]

    @property
    def passed(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        worst = self.failures[:5]
        lines = [f"{len(self.entries)} entries checked, max rel error {self.max_rel_error:.3e}, "
                 f"{len(self.failures)} failures"]
        for e in worst:
            lines.append(f"  {e.name}{list(e.index)}: analytic={e.analytic:.6e} numeric={e.numeric:.6e} "
                         f"rel={e.rel_error:.3e}")
        return "\n".join(lines)


def _named(params) -> List[Tuple[str, Tensor]]:
    if isinstance(params, dict):
        return list(params.items())
    named = []
    for i, p in enumerate(params):
        if isinstance(p, tuple):
            named.append(p)
        else:
            named.append((p.name or f"param{i}", p))
    return named


def grad_check(
    f: Callable[[], Tensor],
    params,
    h: float = 1e-5,
    tol: float = 1e-4,
    atol: float = 0.0,
    floor: float = 1e-8,
) -> GradCheckReport:
    """
    Compare backward() gradients of the scalar `f()` against central differences.

    Args:
        f: deterministic zero-argument function building the loss from `params`
        params: tracked tensors, as a list, a list of (name, tensor) or a dict
        h: finite-difference step
        tol: relative tolerance, |a - cd| / max(|a|, |cd|, floor)
        atol: opt-in absolute tolerance; an entry whose absolute error is at
            or below it passes regardless of its relative error. With the
            default 0 an entry passes iff its relative error is <= tol

    Raises:
        TrainingError: if two evaluations of `f` disagree
    """
    named = _named(params)
    with no_grad():
        first = f().item()
        second = f().item()
    if first != second:
        raise TrainingError(f"grad_check: f is not deterministic ({first!r} != {second!r})")

    for _, p in named:
        p.zero_grad()
    with recording():
        loss = f()
        backward(loss)
    analytic: Dict[int, np.ndarray] = {}
    for _, p in named:
        analytic[id(p)] = np.zeros_like(p.values) if p.grad is None else p.grad.copy()

    report = GradCheckReport(tol=tol, atol=atol)
    with no_grad():
        for name, p in named:
            flat = p.values.reshape(-1)
            grad = analytic[id(p)].reshape(-1)
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + h
                plus = f().item()
                flat[i] = saved - h
                minus = f().item()
                flat[i] = saved
                numeric = (plus - minus) / (2.0 * h)
                a = float(grad[i])
                abs_error = abs(a - numeric)
                rel = abs_error / max(abs(a), abs(numeric), floor)
                report.entries.append(GradCheckEntry(
                    name=name,
                    index=tuple(int(j) for j in np.unravel_index(i, p.shape)) if p.shape else (),
                    analytic=a,
                    numeric=numeric,
                    rel_error=rel,
                    abs_error=abs_error,
                ))
    logger.debug(report.summary())
    return report

"""Laplace mechanism, sensitivity bookkeeping and privacy budget accounting.

A ledger entry without a group composes sequentially; entries sharing a group id are
releases over disjoint data and compose in parallel (the group costs its maximum).
"""
import json
import math
import threading
import zlib
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.custom_exception import BudgetExceededError, ConfigError, DataIOError
from src.logger import get_logger

logger = get_logger(__name__)

# relative slack when comparing a floating ledger total with the plan's epsilon
LEDGER_TOLERANCE = 1e-12


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float

    def __post_init__(self):
        eps = float(self.epsilon)
        if math.isnan(eps) or eps <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        object.__setattr__(self, "epsilon", eps)

    @property
    def no_noise(self) -> bool:
        return math.isinf(self.epsilon)


NO_NOISE = PrivacyBudget(math.inf)


@dataclass(frozen=True)
class Sensitivity:
    delta1: float = 1.0

    def __post_init__(self):
        if not self.delta1 > 0 or math.isinf(self.delta1):
            raise ConfigError(f"l1 sensitivity must be positive and finite, got {self.delta1}")

    def scale(self, budget: PrivacyBudget) -> float:
        """Laplace scale delta1 / epsilon (zero under the no-noise sentinel)."""
        return 0.0 if budget.no_noise else self.delta1 / budget.epsilon


@dataclass(frozen=True)
class LedgerEntry:
    label: str
    epsilon: float
    group: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "epsilon": "inf" if math.isinf(self.epsilon) else self.epsilon,
            "composition": "sequential" if self.group is None else f"parallel:{self.group}",
        }


def ledger_total(ledger: Union["BudgetLedger", Iterable[LedgerEntry]]) -> float:
    entries = ledger.entries if isinstance(ledger, BudgetLedger) else list(ledger)
    sequential = [e.epsilon for e in entries if e.group is None]
    groups = {}
    for e in entries:
        if e.group is not None:
            groups[e.group] = max(groups.get(e.group, 0.0), e.epsilon)
    # fsum is correctly rounded, so the total does not depend on entry order
    return math.fsum(sequential + sorted(groups.values()))


class BudgetLedger:
    """Append-only record of privacy spend, capped at `limit`."""

    def __init__(self, limit: float):
        self.limit = PrivacyBudget(limit).epsilon
        self._entries: List[LedgerEntry] = []
        self._lock = threading.Lock()

    @property
    def entries(self) -> Tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    @property
    def total(self) -> float:
        return ledger_total(self)

    @property
    def remaining(self) -> float:
        return self.limit - self.total

    def charge(self, label: str, epsilon: float, group: Optional[str] = None) -> LedgerEntry:
        if not epsilon > 0:
            raise ConfigError(f"ledger entry '{label}' must spend a positive epsilon, got {epsilon}")
        entry = LedgerEntry(label, float(epsilon), group)
        with self._lock:
            projected = ledger_total(self._entries + [entry])
            if projected > self.limit * (1 + LEDGER_TOLERANCE):
                raise BudgetExceededError(
                    f"privacy budget exceeded: '{label}' would bring the total to {projected} over the limit {self.limit}"
                )
            self._entries.append(entry)
        return entry

    def to_list(self) -> List[dict]:
        return [e.to_dict() for e in self.entries]

    def export(self, path: str) -> None:
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(self.to_list(), f, indent=2, sort_keys=True)
                f.write("\n")
        except OSError as e:
            raise DataIOError(f"cannot write {path}", e)


def _stream_word(part: Union[int, str]) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ConfigError(f"stream ids must be non-negative, got {part}")
    return int(part)


@dataclass(frozen=True)
class NoiseSource:
    """Counter-based noise stream keyed by (seed, hierarchical stream id).

    Each stream is a Philox generator seeded from a SeedSequence whose spawn key is the
    stream path, so any two paths give independent sequences and the same path always
    gives the same sequence regardless of which thread asks for it.
    """

    seed: int
    stream: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)
        object.__setattr__(self, "stream", tuple(_stream_word(s) for s in self.stream))

    def child(self, *parts: Union[int, str]) -> "NoiseSource":
        return NoiseSource(self.seed, self.stream + tuple(_stream_word(p) for p in parts))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(seq))


RandomSource = Union[NoiseSource, np.random.Generator]


def as_generator(src: RandomSource) -> np.random.Generator:
    return src.generator() if isinstance(src, NoiseSource) else src


def laplace_inverse_cdf(u, scale: float):
    """Map u in (-1/2, 1/2) to Lap(0, scale): x = -scale * sign(u) * ln(1 - 2|u|)."""
    u = np.asarray(u, dtype=np.float64)
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def laplace_noise(scale: float, size: int, src: RandomSource) -> np.ndarray:
    if not scale > 0:
        raise ConfigError(f"Laplace scale must be positive, got {scale}")
    gen = as_generator(src)
    u = gen.uniform(np.nextafter(-0.5, 0.0), 0.5, size=size)
    return laplace_inverse_cdf(u, scale)


def laplace_sample(scale: float, src: RandomSource) -> float:
    return float(laplace_noise(scale, 1, src)[0])


def sanitize_counts(
    counts: Sequence[float],
    sensitivity: Sensitivity,
    budget: PrivacyBudget,
    src: RandomSource,
    ledger: Optional[BudgetLedger] = None,
    label: str = "counts",
    group: Optional[str] = None,
) -> np.ndarray:
    """Release counts + i.i.d. Lap(0, delta1/epsilon); the spend is charged before any output.

    The vector is a disjoint histogram, so its cells compose in parallel and the whole
    release costs `budget.epsilon` once.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if ledger is not None:
        ledger.charge(label, budget.epsilon, group)
    if budget.no_noise:
        return counts.copy()
    return counts + laplace_noise(sensitivity.scale(budget), counts.size, src).reshape(counts.shape)

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Tuple, Union

from src.custom_exception import ConfigError
from src.dp_core import PrivacyBudget
from src.logger import get_logger

logger = get_logger(__name__)

ALLOCATION_TOLERANCE = 1e-12
ALLOCATIONS = ("equal", "half-split")


def allocation_schedule(kind: Union[str, Sequence[float]], L: int, p: int) -> Tuple[float, ...]:
    """Budget fractions for layers 1..L (and the leftover layer L+1 when L < p)."""
    if L < 1 or L > p:
        raise ConfigError(f"tree height L must be in 1..{p}, got {L}")
    n_layers = L + 1 if L < p else L

    if not isinstance(kind, str):
        shares = tuple(float(c) for c in kind)
        if len(shares) != n_layers:
            raise ConfigError(f"allocation needs {n_layers} shares for L={L}, p={p}, got {len(shares)}")
        return shares

    if kind == "half-split" and L == p:
        logger.warning("half-split allocation has no leftover layer when L equals p, falling back to equal allocation")
        kind = "equal"
    if kind == "equal":
        share = Fraction(1, n_layers)
        return tuple(float(share) for _ in range(n_layers))
    if kind == "half-split":
        return tuple(float(Fraction(1, 2 * L)) for _ in range(L)) + (0.5,)
    if "," in kind:
        return allocation_schedule(parse_allocation(kind), L, p)
    raise ConfigError(f"unknown allocation '{kind}', expected one of {ALLOCATIONS} or a comma-separated vector")


def parse_allocation(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as e:
        raise ConfigError(f"cannot parse allocation vector '{text}'", e)


@dataclass(frozen=True)
class SanitizationPlan:
    L: int
    allocation: Tuple[float, ...]
    m: int
    epsilon: float
    seed: int = 0

    def __post_init__(self):
        PrivacyBudget(self.epsilon)
        if self.L < 1:
            raise ConfigError(f"tree height L must be at least 1, got {self.L}")
        if self.m < 1:
            raise ConfigError(f"number of replicates m must be at least 1, got {self.m}")
        if len(self.allocation) not in (self.L, self.L + 1):
            raise ConfigError(f"allocation has {len(self.allocation)} shares, L={self.L} needs {self.L} or {self.L + 1}")
        if any(not c > 0 for c in self.allocation):
            raise ConfigError(f"allocation shares must be positive, got {self.allocation}")
        if abs(math.fsum(self.allocation) - 1.0) > ALLOCATION_TOLERANCE:
            raise ConfigError(f"allocation shares must sum to 1, got {math.fsum(self.allocation)}")
        object.__setattr__(self, "allocation", tuple(float(c) for c in self.allocation))

    @classmethod
    def build(cls, L: int, allocation: Union[str, Sequence[float]], m: int, epsilon: float, p: int,
              seed: int = 0) -> "SanitizationPlan":
        return cls(L, allocation_schedule(allocation, L, p), m, epsilon, seed)

    def check_schema(self, p: int) -> None:
        if self.L > p:
            raise ConfigError(f"tree height L={self.L} exceeds the number of attributes p={p}")
        expected = self.L + 1 if self.L < p else self.L
        if len(self.allocation) != expected:
            raise ConfigError(f"allocation needs {expected} shares for L={self.L}, p={p}, got {len(self.allocation)}")

    @property
    def replicate_budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.epsilon / self.m)

    def layer_budget(self, layer: int) -> PrivacyBudget:
        """Budget of layer `layer` (1-based) in one replicate: c_l * epsilon / m."""
        return PrivacyBudget(self.allocation[layer - 1] * self.epsilon / self.m)

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "allocation": list(self.allocation),
            "m": self.m,
            "epsilon": "inf" if math.isinf(self.epsilon) else self.epsilon,
            "seed": self.seed,
        }

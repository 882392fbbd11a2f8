"""Run configuration: defaults < JSON config file < command-line flags."""
import json
import math
import os
import re
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Union

from config.paths_config import SYNTHETIC_DIR
from config.synthesis_config import PROPENSITY_CONFIG, SYNTHESIS_CONFIG
from src.custom_exception import ConfigError, DataIOError
from src.logger import get_logger

logger = get_logger(__name__)

THREADS_ENV = "STEPS_DP_THREADS"
METRICS = ("specks", "l1", "chisq")
# execution details that never change the released data stay out of the manifest echo
EXECUTION_FIELDS = ("output_dir", "threads", "track")

_E_POWER = re.compile(r"^e(?:\^?\(?([+-]?\d+(?:\.\d+)?)\)?)?$")


def parse_epsilon(text: Union[str, float, int]) -> float:
    """Accepts numbers, 'inf', 'e' and powers of e written 'e2', 'e-1' or 'e^-2'."""
    if isinstance(text, (int, float)):
        return float(text)
    value = text.strip().lower()
    match = _E_POWER.match(value)
    if match:
        return math.e if match.group(1) is None else math.exp(float(match.group(1)))
    if value in ("inf", "infinity"):
        return math.inf
    try:
        return float(value)
    except ValueError as e:
        raise ConfigError(f"cannot parse epsilon '{text}'", e)


def parse_epsilons(text: Union[str, List]) -> List[float]:
    items = text.split(",") if isinstance(text, str) else list(text)
    return [parse_epsilon(x) for x in items if str(x).strip()]


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError as e:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got '{env}'", e)
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError(f"thread count must be at least 1, got {threads}")
    return threads


def _json_number(value: float):
    return "inf" if isinstance(value, float) and math.isinf(value) else value


@dataclass
class RunConfig:
    input: Optional[str] = None
    schema: Optional[str] = None
    method: str = SYNTHESIS_CONFIG["method"]
    L: int = SYNTHESIS_CONFIG["L"]
    allocation: Union[str, List[float]] = SYNTHESIS_CONFIG["allocation"]
    epsilon: float = SYNTHESIS_CONFIG["epsilon"]
    m: int = SYNTHESIS_CONFIG["m"]
    seed: int = SYNTHESIS_CONFIG["seed"]
    output_dir: str = SYNTHETIC_DIR
    metrics: List[str] = field(default_factory=lambda: list(SYNTHESIS_CONFIG["metrics"]))
    alphas: List[float] = field(default_factory=lambda: list(SYNTHESIS_CONFIG["alphas"]))
    combination_rule: str = SYNTHESIS_CONFIG["combination_rule"]
    epsilons: List[float] = field(default_factory=lambda: list(SYNTHESIS_CONFIG["epsilons"]))
    repetitions: int = SYNTHESIS_CONFIG["repetitions"]
    methods: List[str] = field(default_factory=lambda: ["steps", "random-partition", "laplace-full"])
    dense_threshold: int = SYNTHESIS_CONFIG["dense_threshold"]
    interactions: bool = PROPENSITY_CONFIG["interactions"]
    budget_limit: Optional[float] = None
    unsafe_no_noise: bool = False
    debug: bool = False
    threads: Optional[int] = None
    track: bool = False

    def __post_init__(self):
        self.epsilon = parse_epsilon(self.epsilon)
        self.epsilons = parse_epsilons(self.epsilons)
        if self.budget_limit is not None:
            self.budget_limit = parse_epsilon(self.budget_limit)
        if isinstance(self.allocation, str) and "," in self.allocation:
            self.allocation = [float(x) for x in self.allocation.split(",") if x.strip()]
        elif not isinstance(self.allocation, str):
            self.allocation = [float(x) for x in self.allocation]

    def validate(self) -> "RunConfig":
        if not self.epsilon > 0 or math.isnan(self.epsilon):
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if any(not e > 0 for e in self.epsilons):
            raise ConfigError(f"sweep epsilons must be positive, got {self.epsilons}")
        no_noise = math.isinf(self.epsilon) or any(math.isinf(e) for e in self.epsilons)
        if no_noise and not self.unsafe_no_noise:
            raise ConfigError("epsilon=inf releases the data without noise; pass --unsafe-no-noise to allow it")
        if self.m < 1 or self.repetitions < 1:
            raise ConfigError("m and repetitions must be at least 1")
        unknown = [x for x in self.metrics if x not in METRICS]
        if unknown:
            raise ConfigError(f"unknown metrics {unknown}, expected a subset of {list(METRICS)}")
        if self.budget_limit is not None and not self.budget_limit > 0:
            raise ConfigError(f"budget limit must be positive, got {self.budget_limit}")
        return self

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys {unknown}")
        return cls(**payload)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as f:
                payload = json.load(f)
        except FileNotFoundError as e:
            raise DataIOError(f"config file not found: {path}", e)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {path}", e)
        if not isinstance(payload, dict):
            raise ConfigError(f"config file must hold a JSON object: {path}")
        return cls.from_dict(payload)

    @classmethod
    def load(cls, path: Optional[str] = None, **overrides) -> "RunConfig":
        """Defaults, then the file at `path`, then every override that is not None."""
        base = asdict(cls.from_file(path)) if path else {}
        base.update({k: v for k, v in overrides.items() if v is not None})
        config = cls.from_dict(base)
        logger.info(f"Run configuration resolved: {config.to_json()}")
        return config

    def to_dict(self, canonical: bool = True) -> dict:
        payload = asdict(self)
        if canonical:
            for name in EXECUTION_FIELDS:
                payload.pop(name)
        payload["epsilon"] = _json_number(self.epsilon)
        payload["epsilons"] = [_json_number(e) for e in self.epsilons]
        if self.budget_limit is not None:
            payload["budget_limit"] = _json_number(self.budget_limit)
        return payload

    def to_json(self, canonical: bool = True) -> str:
        return json.dumps(self.to_dict(canonical), sort_keys=True)

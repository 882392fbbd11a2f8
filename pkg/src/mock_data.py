"""Seeded mock data over the bundled 15-attribute voter schema.

In skewed mode the attribute with the most levels (family income on the voter schema)
gets a geometric marginal and every other attribute is drawn conditionally on it with a
mild tilt, so the driver has by far the least uniform one-way table.
"""
import numpy as np

from config.paths_config import VOTER_SCHEMA_PATH
from config.synthesis_config import MOCK_DATA_CONFIG
from src.custom_exception import ConfigError
from src.data_ingestion import load_schema
from src.dataset import CategoricalDataset, Schema
from src.dp_core import NoiseSource
from src.logger import get_logger

logger = get_logger(__name__)

DRIVER_DECAY = 0.6
# bound on |slope| + |tilt| keeps conditional level odds within a factor e
MAX_TILT = 0.5


def voter_schema() -> Schema:
    return load_schema(VOTER_SCHEMA_PATH)


def _draw_levels(gen: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of `probs` by inverse CDF."""
    cum = np.cumsum(probs, axis=1)
    u = gen.random(probs.shape[0]) * cum[:, -1]
    return np.minimum((u[:, None] >= cum).sum(axis=1), probs.shape[1] - 1)


def mock_dataset(
    schema: Schema = None,
    n: int = MOCK_DATA_CONFIG["n"],
    seed: int = MOCK_DATA_CONFIG["seed"],
    skewed: bool = MOCK_DATA_CONFIG["skewed"],
) -> CategoricalDataset:
    schema = voter_schema() if schema is None else schema
    if n < 0:
        raise ConfigError(f"mock record count must be non-negative, got {n}")
    gen = NoiseSource(seed, ("mock-data",)).generator()
    records = np.empty((n, schema.p), dtype=np.int64)

    if not skewed:
        for j, k in enumerate(schema.cardinalities):
            records[:, j] = gen.integers(0, k, size=n)
        logger.info(f"Generated {n} uniform mock records over {schema.p} attributes")
        return CategoricalDataset(schema, records)

    driver = schema.cardinalities.index(schema.max_cardinality)
    k_driver = schema.cardinalities[driver]
    weights = DRIVER_DECAY ** np.arange(k_driver)
    records[:, driver] = gen.choice(k_driver, size=n, p=weights / weights.sum())
    position = 2.0 * records[:, driver] / max(k_driver - 1, 1) - 1.0

    for j, k in enumerate(schema.cardinalities):
        if j == driver:
            continue
        slope, tilt = gen.uniform(-MAX_TILT, MAX_TILT, size=2)
        scale = np.arange(k) / (k - 1)
        logits = (slope * position + tilt)[:, None] * scale[None, :]
        probs = np.exp(logits)
        records[:, j] = _draw_levels(gen, probs)

    logger.info(f"Generated {n} skewed mock records driven by '{schema.names[driver]}'")
    return CategoricalDataset(schema, records)

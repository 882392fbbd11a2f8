import logging
from contextlib import contextmanager

import numpy as np
import pytest

from src.dataset import Attribute, CategoricalDataset, Schema
from src.mock_data import voter_schema as bundled_voter_schema


@contextmanager
def suppress_logging(namespace):
    logger = logging.getLogger(namespace)
    old_value = logger.disabled
    logger.disabled = True
    try:
        yield
    finally:
        logger.disabled = old_value


def make_schema(*cardinalities, names=None) -> Schema:
    names = names or [f"a{j}" for j in range(len(cardinalities))]
    return Schema(tuple(Attribute(name, tuple(f"l{k}" for k in range(card)))
                        for name, card in zip(names, cardinalities)))


def random_dataset(schema: Schema, n: int, seed: int = 0, probs=None) -> CategoricalDataset:
    gen = np.random.default_rng(seed)
    columns = []
    for j, k in enumerate(schema.cardinalities):
        p = None if probs is None else probs[j]
        columns.append(gen.choice(k, size=n, p=p))
    records = np.stack(columns, axis=1) if columns else np.zeros((n, 0), dtype=np.int64)
    return CategoricalDataset(schema, records)


def dataset_of(schema: Schema, rows) -> CategoricalDataset:
    return CategoricalDataset(schema, np.asarray(rows, dtype=np.int64).reshape(-1, schema.p))


@pytest.fixture
def binary_schema():
    return make_schema(2, 2)


@pytest.fixture
def small_schema():
    return make_schema(2, 3, 2)


@pytest.fixture
def small_data(small_schema):
    return random_dataset(small_schema, 400, seed=1)


@pytest.fixture(scope="session")
def voter_schema():
    return bundled_voter_schema()

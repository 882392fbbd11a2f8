"""Categorical schema, datasets and contingency tables.

Records are stored as an (n, p) array of level indices in the schema's declared level
order, so cell indices are stable across runs and machines.
"""
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config.synthesis_config import SYNTHESIS_CONFIG
from src.custom_exception import SchemaError, TableTooLargeError
from src.logger import get_logger

logger = get_logger(__name__)

LEVEL_LABEL = re.compile(r"^[A-Za-z0-9_ -]+$")
MAX_CELLS = np.iinfo(np.int64).max

AttrRef = Union[int, str]


@dataclass(frozen=True)
class Attribute:
    name: str
    levels: Tuple[str, ...]

    @property
    def cardinality(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class Schema:
    attributes: Tuple[Attribute, ...]

    def __post_init__(self):
        if not self.attributes:
            raise SchemaError("schema has no attributes")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate attribute names in schema: {names}")
        for attr in self.attributes:
            if attr.cardinality < 2:
                raise SchemaError(f"attribute '{attr.name}' needs at least 2 levels, got {list(attr.levels)}")
            if len(set(attr.levels)) != attr.cardinality:
                raise SchemaError(f"duplicate level labels for attribute '{attr.name}'")
            bad = [lvl for lvl in attr.levels if not LEVEL_LABEL.match(lvl)]
            if bad:
                raise SchemaError(f"attribute '{attr.name}' has invalid level labels {bad}")
        if self.n_cells > MAX_CELLS:
            raise SchemaError(f"full cross-tabulation has {self.n_cells} cells, more than int64 can index")

    @classmethod
    def from_dict(cls, payload: dict) -> "Schema":
        try:
            attributes = tuple(
                Attribute(str(a["name"]), tuple(str(lvl) for lvl in a["levels"]))
                for a in payload["attributes"]
            )
        except (KeyError, TypeError) as e:
            raise SchemaError("schema must look like {\"attributes\": [{\"name\": ..., \"levels\": [...]}]}", e)
        return cls(attributes)

    def to_dict(self) -> dict:
        return {"attributes": [{"name": a.name, "levels": list(a.levels)} for a in self.attributes]}

    @property
    def p(self) -> int:
        return len(self.attributes)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    @property
    def cardinalities(self) -> Tuple[int, ...]:
        return tuple(a.cardinality for a in self.attributes)

    @property
    def n_cells(self) -> int:
        # python ints, so the product never wraps
        total = 1
        for k in self.cardinalities:
            total *= k
        return total

    @property
    def max_cardinality(self) -> int:
        return max(self.cardinalities)

    def index(self, attr: AttrRef) -> int:
        if isinstance(attr, (int, np.integer)):
            if not 0 <= int(attr) < self.p:
                raise SchemaError(f"attribute index {attr} out of range for {self.p} attributes")
            return int(attr)
        try:
            return self.names.index(attr)
        except ValueError:
            raise SchemaError(f"unknown attribute '{attr}'")

    def resolve(self, attrs: Iterable[AttrRef]) -> Tuple[int, ...]:
        resolved = tuple(self.index(a) for a in attrs)
        if not resolved:
            raise SchemaError("attribute subset must not be empty")
        if len(set(resolved)) != len(resolved):
            raise SchemaError(f"duplicate attribute in {list(attrs)}")
        return resolved


@dataclass(frozen=True, eq=False)
class CategoricalDataset:
    schema: Schema
    records: np.ndarray

    def __post_init__(self):
        records = np.asarray(self.records, dtype=np.int64)
        if records.ndim != 2 or records.shape[1] != self.schema.p:
            if records.size == 0:
                records = records.reshape(0, self.schema.p)
            else:
                raise SchemaError(f"records must have shape (n, {self.schema.p}), got {records.shape}")
        cards = np.array(self.schema.cardinalities, dtype=np.int64)
        if records.size and ((records < 0).any() or (records >= cards).any()):
            raise SchemaError("level index outside its attribute's cardinality")
        records = records.copy()
        records.flags.writeable = False
        object.__setattr__(self, "records", records)

    @property
    def n(self) -> int:
        return self.records.shape[0]

    def flat_index(self, attrs: Optional[Sequence[int]] = None, rows: Optional[np.ndarray] = None) -> np.ndarray:
        axes = tuple(range(self.schema.p)) if attrs is None else tuple(attrs)
        block = self.records if rows is None else self.records[rows]
        if block.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        dims = tuple(self.schema.cardinalities[a] for a in axes)
        return np.ravel_multi_index(tuple(block[:, a] for a in axes), dims)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {a.name: np.asarray(a.levels, dtype=object)[self.records[:, j]] for j, a in enumerate(self.schema.attributes)},
            columns=list(self.schema.names),
        )


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    axes: Tuple[int, ...]
    shape: Tuple[int, ...]
    dense: Optional[np.ndarray] = None
    sparse: Optional[Dict[Tuple[int, ...], int]] = None

    @property
    def n_cells(self) -> int:
        total = 1
        for k in self.shape:
            total *= k
        return total

    @property
    def total(self) -> int:
        if self.dense is not None:
            return int(self.dense.sum())
        return int(sum(self.sparse.values()))

    @property
    def is_dense(self) -> bool:
        return self.dense is not None

    def cell(self, levels: Sequence[int]) -> int:
        levels = tuple(int(x) for x in levels)
        if self.dense is not None:
            return int(self.dense[levels])
        return int(self.sparse.get(levels, 0))

    def items(self) -> Iterator[Tuple[Tuple[int, ...], int]]:
        if self.dense is not None:
            for flat in np.flatnonzero(self.dense):
                yield tuple(int(x) for x in np.unravel_index(flat, self.shape)), int(self.dense.flat[flat])
        else:
            for key in sorted(self.sparse):
                yield key, int(self.sparse[key])

    def flat(self) -> np.ndarray:
        return self.to_dense().reshape(-1)

    def to_dense(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        out = np.zeros(self.shape, dtype=np.int64)
        for key, count in self.sparse.items():
            out[key] = count
        return out

    def marginalize(self, keep: Sequence[int]) -> "ContingencyTable":
        """Sum out every axis not in `keep` (attribute indices, kept in the given order)."""
        keep = tuple(keep)
        positions = tuple(self.axes.index(a) for a in keep)
        shape = tuple(self.shape[i] for i in positions)
        if self.dense is not None:
            drop = tuple(i for i in range(len(self.axes)) if i not in positions)
            summed = self.dense.sum(axis=drop)
            remaining = [i for i in range(len(self.axes)) if i in positions]
            order = [remaining.index(i) for i in positions]
            return ContingencyTable(keep, shape, dense=np.transpose(summed, order))
        out: Dict[Tuple[int, ...], int] = {}
        for key, count in self.sparse.items():
            sub = tuple(key[i] for i in positions)
            out[sub] = out.get(sub, 0) + count
        return ContingencyTable(keep, shape, sparse=out)


def _count_chunk(flat, n_cells):
    return np.bincount(flat, minlength=n_cells)


def cross_tabulate(
    data: CategoricalDataset,
    attrs: Iterable[AttrRef],
    rows: Optional[np.ndarray] = None,
    dense_threshold: int = SYNTHESIS_CONFIG["dense_threshold"],
    threads: int = 1,
) -> ContingencyTable:
    axes = data.schema.resolve(attrs)
    shape = tuple(data.schema.cardinalities[a] for a in axes)
    n_cells = 1
    for k in shape:
        n_cells *= k
    flat = data.flat_index(axes, rows)

    if n_cells <= dense_threshold:
        if threads > 1 and flat.size > threads:
            chunks = np.array_split(flat, threads)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                partials = list(pool.map(lambda c: _count_chunk(c, n_cells), chunks))
            counts = np.sum(partials, axis=0)
        else:
            counts = _count_chunk(flat, n_cells)
        return ContingencyTable(axes, shape, dense=counts.astype(np.int64).reshape(shape))

    logger.info(f"Cross-tabulation over {n_cells} cells exceeds dense threshold {dense_threshold}, using sparse storage")
    keys, counts = np.unique(flat, return_counts=True)
    cells = np.unravel_index(keys, shape) if keys.size else tuple(np.zeros(0, dtype=np.int64) for _ in shape)
    sparse = {tuple(int(c[i]) for c in cells): int(counts[i]) for i in range(keys.size)}
    return ContingencyTable(axes, shape, sparse=sparse)


def one_way_counts(data: CategoricalDataset, attr: AttrRef, rows: Optional[np.ndarray] = None) -> np.ndarray:
    j = data.schema.index(attr)
    column = data.records[:, j] if rows is None else data.records[rows, j]
    return np.bincount(column, minlength=data.schema.cardinalities[j]).astype(np.int64)


def full_table_counts(
    data: CategoricalDataset, dense_threshold: int = SYNTHESIS_CONFIG["dense_threshold"]
) -> np.ndarray:
    """Dense flat count vector over all N cells; refuses tables above the threshold."""
    n_cells = data.schema.n_cells
    if n_cells > dense_threshold:
        raise TableTooLargeError(f"full table too large: {n_cells} cells exceed threshold {dense_threshold}")
    return np.bincount(data.flat_index(), minlength=n_cells).astype(np.int64)


def dataset_from_counts(schema: Schema, counts: np.ndarray) -> CategoricalDataset:
    counts = np.asarray(counts, dtype=np.int64).reshape(-1)
    if counts.size != schema.n_cells:
        raise SchemaError(f"count vector has {counts.size} cells, schema has {schema.n_cells}")
    cells = np.repeat(np.arange(counts.size, dtype=np.int64), counts)
    if cells.size == 0:
        return CategoricalDataset(schema, np.zeros((0, schema.p), dtype=np.int64))
    records = np.stack(np.unravel_index(cells, schema.cardinalities), axis=1)
    return CategoricalDataset(schema, records)


def dataset_from_table(schema: Schema, table: ContingencyTable) -> CategoricalDataset:
    if table.axes != tuple(range(schema.p)):
        raise SchemaError("round trip needs the full cross-tabulation over every attribute in schema order")
    return dataset_from_counts(schema, table.flat())

"""STEPS partition hierarchy.

Layer 0 is the root (all n records, released as the public n). Layers 1..L split every
node by an attribute: the statistically elected most valuable attribute (MVA) for STEPS,
or one random attribute per layer for the random-partition baseline. Under each layer-L
node the attributes still available are fully cross-tabulated into a leaf block, which is
layer L+1. After `pad_phantoms` every internal node has exactly b children and every leaf
block is padded to B = b**d cells, so the tree has constant branching and uniform depth.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from config.synthesis_config import SYNTHESIS_CONFIG
from src.custom_exception import ConfigError, TableTooLargeError
from src.dataset import CategoricalDataset, Schema, one_way_counts
from src.dp_core import NoiseSource
from src.logger import get_logger
from src.sanitization_plan import SanitizationPlan

logger = get_logger(__name__)

ELECTION_WARNING = (
    "MVA election reads the confidential data and is not charged to the privacy ledger; "
    "only the sanitized node counts are accounted for"
)


@dataclass(frozen=True)
class MvaScore:
    attribute: int
    delta_aic: float
    candidates: Dict[int, float] = field(default_factory=dict)


def aic_delta(counts: Sequence[float]) -> float:
    """AIC(one-attribute loglinear model) - AIC(intercept-only) on a one-way table.

    Closed form of the Poisson loglinear fit: -2 * sum n_k ln(n_k K / n) + 2 (K - 1),
    with 0 ln 0 = 0. Lower is better. An empty table scores +inf.
    """
    counts = np.asarray(counts, dtype=np.float64)
    K = counts.size
    if K < 2:
        raise ConfigError(f"one-way table needs at least 2 levels, got {K}")
    if (counts < 0).any():
        raise ConfigError("one-way counts must be non-negative")
    n = counts.sum()
    if n == 0:
        return math.inf
    nz = counts[counts > 0]
    return float(-2.0 * np.sum(nz * np.log(nz * K / n)) + 2.0 * (K - 1))


def elect_mva(data: CategoricalDataset, rows: Optional[np.ndarray], available: Sequence[int]) -> MvaScore:
    """Attribute with the smallest aic_delta on the subset; ties go to schema order."""
    if not available:
        raise ConfigError("cannot elect an MVA from an empty availability set")
    candidates = {a: aic_delta(one_way_counts(data, a, rows)) for a in sorted(available)}
    best = min(candidates, key=lambda a: (candidates[a], a))
    return MvaScore(best, candidates[best], candidates)


@dataclass(eq=False)
class LeafBlock:
    attrs: Tuple[int, ...]
    shape: Tuple[int, ...]
    true_counts: np.ndarray
    cell_index: np.ndarray
    padded_size: int = 0
    noisy: Optional[np.ndarray] = None
    consistent: Optional[np.ndarray] = None
    # released value of each implicit phantom cell after top-down
    pad_share: float = 0.0

    @property
    def size(self) -> int:
        return int(self.true_counts.size)

    def clone(self) -> "LeafBlock":
        return LeafBlock(self.attrs, self.shape, self.true_counts, self.cell_index, self.padded_size)


@dataclass(eq=False)
class TreeNode:
    path: Tuple[Tuple[int, int], ...]
    layer: int
    available: Tuple[int, ...]
    true_count: int
    is_phantom: bool = False
    split_attr: Optional[int] = None
    mva: Optional[MvaScore] = None
    children: List["TreeNode"] = field(default_factory=list)
    block: Optional[LeafBlock] = None
    cell: Optional[int] = None
    noisy_count: Optional[float] = None
    z: Optional[float] = None
    consistent_count: Optional[float] = None

    @property
    def is_leaf(self) -> bool:
        return not self.children and self.block is None

    def iter_nodes(self) -> Iterator["TreeNode"]:
        yield self
        for child in self.children:
            yield from child.iter_nodes()

    def clone(self) -> "TreeNode":
        return TreeNode(
            path=self.path,
            layer=self.layer,
            available=self.available,
            true_count=self.true_count,
            is_phantom=self.is_phantom,
            split_attr=self.split_attr,
            mva=self.mva,
            children=[c.clone() for c in self.children],
            block=self.block.clone() if self.block is not None else None,
            cell=self.cell,
        )


@dataclass(eq=False)
class PartitionTree:
    schema: Schema
    root: TreeNode
    L: int
    method: str
    b: int
    block_depth: int = 0
    padded: bool = False

    @property
    def n(self) -> int:
        return self.root.true_count

    @property
    def has_blocks(self) -> bool:
        return self.L < self.schema.p

    @property
    def padded_block_size(self) -> int:
        return self.b ** self.block_depth if self.has_blocks else 1

    @property
    def depth(self) -> int:
        return self.L + 1 if self.has_blocks else self.L

    def iter_nodes(self) -> Iterator[TreeNode]:
        return self.root.iter_nodes()

    def layers(self) -> List[List[TreeNode]]:
        out = [[self.root]]
        for _ in range(self.L):
            out.append([c for node in out[-1] for c in node.children])
        return out

    def leaf_nodes(self) -> List[TreeNode]:
        """Real layer-L nodes: they own the leaf blocks (or are single cells when L == p)."""
        return [node for node in self.layers()[self.L] if not node.is_phantom]

    def level_fanouts(self) -> List[int]:
        fanouts = [self.b] * self.L
        if self.has_blocks:
            fanouts.append(self.padded_block_size)
        return fanouts

    def clone(self) -> "PartitionTree":
        return PartitionTree(self.schema, self.root.clone(), self.L, self.method, self.b, self.block_depth, self.padded)

    def check_paths(self) -> None:
        for node in self.iter_nodes():
            attrs = [a for a, _ in node.path]
            if len(set(attrs)) != len(attrs):
                raise AssertionError(f"attribute repeated along path {node.path}")
            if node.block is not None and set(node.block.attrs) & set(attrs):
                raise AssertionError(f"leaf block reuses a path attribute under {node.path}")


def _cell_index(schema, path, block_attrs):
    shape = tuple(schema.cardinalities[a] for a in block_attrs)
    size = int(np.prod(shape)) if shape else 1
    levels = [np.zeros(size, dtype=np.int64) for _ in range(schema.p)]
    for attr, level in path:
        levels[attr][:] = level
    if block_attrs:
        for attr, column in zip(block_attrs, np.unravel_index(np.arange(size), shape)):
            levels[attr] = column
    return np.ravel_multi_index(tuple(levels), schema.cardinalities)


class _TreeGrower:
    def __init__(self, data, L, chooser, threads=1):
        self.data = data
        self.L = L
        self.chooser = chooser
        self.threads = threads

    def grow(self, rows, path, layer, available):
        node = TreeNode(path=path, layer=layer, available=available, true_count=int(rows.size))
        schema = self.data.schema

        if layer == self.L:
            if available:
                attrs = tuple(sorted(available))
                shape = tuple(schema.cardinalities[a] for a in attrs)
                size = int(np.prod(shape))
                flat = self.data.flat_index(attrs, rows)
                node.block = LeafBlock(
                    attrs=attrs,
                    shape=shape,
                    true_counts=np.bincount(flat, minlength=size).astype(np.int64),
                    cell_index=_cell_index(schema, path, attrs),
                )
            else:
                node.cell = int(_cell_index(schema, path, ())[0])
            return node

        attr, score = self.chooser(rows, available, layer)
        node.split_attr = attr
        node.mva = score
        column = self.data.records[rows, attr]
        remaining = tuple(a for a in available if a != attr)
        subsets = [rows[column == level] for level in range(schema.cardinalities[attr])]

        def grow_child(level):
            return self.grow(subsets[level], path + ((attr, level),), layer + 1, remaining)

        if layer == 0 and self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                node.children = list(pool.map(grow_child, range(len(subsets))))
        else:
            node.children = [grow_child(level) for level in range(len(subsets))]
        return node


def _check_buildable(data, plan, dense_threshold):
    plan.check_schema(data.schema.p)
    # the real leaves always cover every cell of the full table
    if data.schema.n_cells > dense_threshold:
        raise TableTooLargeError(
            f"full table too large: the tree leaves cover all {data.schema.n_cells} cells, "
            f"above --dense-threshold {dense_threshold}"
        )


def _grow_tree(data, plan, chooser, method, threads) -> PartitionTree:
    grower = _TreeGrower(data, plan.L, chooser, threads)
    root = grower.grow(np.arange(data.n, dtype=np.int64), (), 0, tuple(range(data.schema.p)))
    tree = PartitionTree(data.schema, root, plan.L, method, b=data.schema.max_cardinality)
    tree.check_paths()
    return tree


def build_tree(
    data: CategoricalDataset,
    plan: SanitizationPlan,
    dense_threshold: int = SYNTHESIS_CONFIG["dense_threshold"],
    threads: int = 1,
) -> PartitionTree:
    _check_buildable(data, plan, dense_threshold)
    logger.warning(ELECTION_WARNING)

    def choose(rows, available, layer):
        score = elect_mva(data, rows, available)
        return score.attribute, score

    tree = _grow_tree(data, plan, choose, "steps", threads)
    elected = tree.root.split_attr
    logger.info(f"STEPS tree built with L={plan.L}, root split on '{data.schema.names[elected]}'")
    return tree


def random_partition_tree(
    data: CategoricalDataset,
    plan: SanitizationPlan,
    seed: Optional[int] = None,
    dense_threshold: int = SYNTHESIS_CONFIG["dense_threshold"],
    threads: int = 1,
) -> PartitionTree:
    """Same structure as build_tree, but layer l splits on the l-th attribute of a random order."""
    _check_buildable(data, plan, dense_threshold)
    seed = plan.seed if seed is None else seed
    gen = NoiseSource(seed, ("random-partition",)).generator()
    order = tuple(int(a) for a in gen.permutation(data.schema.p)[: plan.L])

    def choose(rows, available, layer):
        return order[layer], None

    tree = _grow_tree(data, plan, choose, "random-partition", threads)
    logger.info(f"Random partition tree built with split order {[data.schema.names[a] for a in order]}")
    return tree


def pad_phantoms(tree: PartitionTree) -> PartitionTree:
    """Give every internal node exactly b children and pad every leaf block to b**d cells."""
    b = tree.b
    added = 0
    for node in list(tree.iter_nodes()):
        if node.is_phantom or node.layer >= tree.L:
            continue
        k = len(node.children)
        remaining = tuple(a for a in node.available if a != node.split_attr)
        for level in range(k, b):
            node.children.append(TreeNode(
                path=node.path + ((node.split_attr, level),),
                layer=node.layer + 1,
                available=remaining,
                true_count=0,
                is_phantom=True,
            ))
        added += b - k

    if tree.has_blocks:
        largest = max(node.block.size for node in tree.leaf_nodes())
        depth = 1
        while b ** depth < largest:
            depth += 1
        tree.block_depth = depth
        for node in tree.leaf_nodes():
            node.block.padded_size = b ** depth

    tree.padded = True
    logger.info(f"Added {added} phantom nodes (b={b}); leaf blocks padded to {tree.padded_block_size} cells")
    return tree


def _score(value):
    if value is None:
        return None
    return "inf" if math.isinf(value) else value


def tree_audit(tree: PartitionTree, replicates: Sequence[PartitionTree] = (), debug: bool = False) -> dict:
    """JSON-ready description of the tree; true counts appear only with debug=True."""
    names = tree.schema.names
    levels = [a.levels for a in tree.schema.attributes]

    def label(attr, level):
        return levels[attr][level] if level < len(levels[attr]) else f"phantom-{level}"

    released = [list(t.iter_nodes()) for t in replicates]
    nodes = []
    for i, node in enumerate(tree.iter_nodes()):
        entry = {
            "path": [[names[a], label(a, lvl)] for a, lvl in node.path],
            "layer": node.layer,
            "phantom": node.is_phantom,
        }
        if node.split_attr is not None:
            entry["split_attribute"] = names[node.split_attr]
        if node.mva is not None:
            entry["delta_aic"] = _score(node.mva.delta_aic)
            entry["candidates"] = {names[a]: _score(s) for a, s in node.mva.candidates.items()}
        if released:
            entry["noisy_count"] = [_score(r[i].noisy_count) for r in released]
            entry["consistent_count"] = [_score(r[i].consistent_count) for r in released]
        if debug:
            entry["true_count"] = node.true_count
        if node.block is not None:
            block = {
                "attributes": [names[a] for a in node.block.attrs],
                "cells": node.block.size,
                "padded_cells": node.block.padded_size,
            }
            if released:
                block["noisy_total"] = [float(r[i].block.noisy.sum()) for r in released if r[i].block.noisy is not None]
                block["consistent_total"] = [
                    float(r[i].block.consistent.sum()) for r in released if r[i].block.consistent is not None
                ]
            if debug:
                block["true_total"] = int(node.block.true_counts.sum())
            entry["block"] = block
        nodes.append(entry)

    return {
        "method": tree.method,
        "L": tree.L,
        "b": tree.b,
        "block_depth": tree.block_depth,
        "padded_block_size": tree.padded_block_size if tree.has_blocks else None,
        "election_warning": ELECTION_WARNING if tree.method == "steps" else None,
        "debug": debug,
        "nodes": nodes,
    }

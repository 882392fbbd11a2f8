"""Universal-histogram consistency for sanitized partition trees.

bottom_up computes, for every node, z = w * noisy + (1 - w) * sum(z of children), the
least-squares estimate of the node's count from its own subtree. top_down then releases
the root and hands each parent's surplus out evenly: child = z(child) + (parent - sum z)/f.
With constant fan-out b the weights are the closed form
(b^h - b^(h-1)) / (b^h - 1) for a subtree of height h. A padded leaf block of B = b^d
cells behaves as d b-ary levels without observations, which is the same as one level
of fan-out B; the per-level weights below handle any per-level fan-out.

Phantom nodes and phantom cells are observed as exact zeros, so a phantom subtree
always has z = 0 and is never materialized.
"""
from typing import List, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from src.custom_exception import ConfigError, ConsistencyError
from src.logger import get_logger
from src.steps_tree import PartitionTree

logger = get_logger(__name__)

RESIDUAL_TOLERANCE = 1e-9
ORACLE_MAX_NODES = 10_000


def universal_weight(b: int, h: int) -> float:
    """Own-count weight of a node whose subtree has height h (leaves: h = 1)."""
    if h <= 1:
        return 1.0
    return (b ** h - b ** (h - 1)) / (b ** h - 1)


def level_weights(fanouts: Sequence[int]) -> List[float]:
    """Own-count weight per depth (root first, leaves last) for the given level fan-outs."""
    # s is the variance of z relative to a single noisy count
    s = 1.0
    weights = [1.0]
    for f in reversed(fanouts):
        s = 1.0 / (1.0 + 1.0 / (f * s))
        weights.append(s)
    return weights[::-1]


def check_uniform_depth(tree: PartitionTree) -> None:
    if not tree.padded:
        raise ConsistencyError("tree must be padded with phantoms before consistency")
    for node in tree.iter_nodes():
        if node.is_phantom:
            continue
        if node.layer < tree.L:
            if len(node.children) != tree.b:
                raise ConsistencyError(
                    f"node at layer {node.layer} has {len(node.children)} children, expected b={tree.b}"
                )
        elif node.children or (node.block is None) == tree.has_blocks:
            raise ConsistencyError(f"non-uniform leaf depth under path {node.path}")
        elif node.block is not None and node.block.padded_size != tree.padded_block_size:
            raise ConsistencyError(f"leaf block under {node.path} is not padded to {tree.padded_block_size} cells")


def _children_sum(node):
    if node.block is not None:
        return float(node.block.noisy.sum())
    return float(sum(child.z for child in node.children))


def bottom_up(tree: PartitionTree) -> PartitionTree:
    check_uniform_depth(tree)
    weights = level_weights(tree.level_fanouts())

    def visit(node, depth):
        if node.is_phantom:
            node.z = 0.0
            return node.z
        for child in node.children:
            visit(child, depth + 1)
        if node.is_leaf:
            node.z = float(node.noisy_count)
            return node.z
        total = _children_sum(node)
        if node.noisy_count is None:
            # unsanitized node: only the subtree informs it
            node.z = total
        else:
            w = weights[depth]
            node.z = w * float(node.noisy_count) + (1.0 - w) * total
        return node.z

    visit(tree.root, 0)
    return tree


def top_down(tree: PartitionTree) -> PartitionTree:
    """Release consistent counts; an unsanitized root is pinned to the public n."""
    fanouts = tree.level_fanouts()
    root = tree.root
    root.consistent_count = float(root.true_count) if root.noisy_count is None else float(root.z)

    stack = [(root, 0)]
    while stack:
        node, depth = stack.pop()
        if node.is_phantom or node.is_leaf:
            continue
        f = fanouts[depth]
        surplus = node.consistent_count - _children_sum(node)
        if node.block is not None:
            share = surplus / f
            node.block.consistent = node.block.noisy + share
            node.block.pad_share = share
            continue
        for child in node.children:
            child.consistent_count = child.z + surplus / f
            stack.append((child, depth + 1))
    return tree


def make_consistent(tree: PartitionTree) -> PartitionTree:
    return top_down(bottom_up(tree))


def max_residual(tree: PartitionTree) -> float:
    """Largest |parent - sum(children)| / (1 + |parent|) over materialized parents."""
    worst = 0.0
    for node in tree.iter_nodes():
        if node.is_phantom or node.is_leaf:
            continue
        if node.block is not None:
            blk = node.block
            total = float(blk.consistent.sum()) + (blk.padded_size - blk.size) * blk.pad_share
        else:
            total = sum(child.consistent_count for child in node.children)
        worst = max(worst, abs(node.consistent_count - total) / (1.0 + abs(node.consistent_count)))
    return worst


def check_consistency(tree: PartitionTree, tolerance: float = RESIDUAL_TOLERANCE) -> float:
    residual = max_residual(tree)
    if residual > tolerance:
        raise ConsistencyError(f"consistency residual {residual} exceeds {tolerance}")
    return residual


def copy_sanitized(tree: PartitionTree) -> PartitionTree:
    out = tree.clone()
    for src, dst in zip(tree.iter_nodes(), out.iter_nodes()):
        dst.noisy_count = src.noisy_count
        if src.block is not None and src.block.noisy is not None:
            dst.block.noisy = src.block.noisy.copy()
    return out


class _Expansion:

    def __init__(self, tree):
        self.tree = tree
        self.parent: List[int] = []
        self.value: List[float] = []
        self.observed: List[bool] = []

    def add(self, parent, value, observed):
        self.parent.append(parent)
        self.value.append(0.0 if value is None else float(value))
        self.observed.append(observed)
        if len(self.parent) > ORACLE_MAX_NODES:
            raise ConfigError(f"tree too large for the least-squares oracle (> {ORACLE_MAX_NODES} nodes)")
        return len(self.parent) - 1

    def phantom(self, parent, layer):
        index = self.add(parent, 0.0, True)
        if layer < self.tree.L:
            for _ in range(self.tree.b):
                self.phantom(index, layer + 1)
        elif self.tree.has_blocks:
            for _ in range(self.tree.padded_block_size):
                self.add(index, 0.0, True)

    def node(self, node, parent):
        if node.is_phantom:
            self.phantom(parent, node.layer)
            return
        index = self.add(parent, node.noisy_count, node.noisy_count is not None)
        for child in node.children:
            self.node(child, index)
        if node.block is not None:
            for value in node.block.noisy:
                self.add(index, value, True)
            for _ in range(node.block.padded_size - node.block.size):
                self.add(index, 0.0, True)


def ls_oracle(tree: PartitionTree) -> PartitionTree:
    """Direct constrained least-squares solve; reference for bottom_up + top_down in tests.

    min sum over observed v of (c_v - noisy_v)^2  s.t. every parent equals the sum of its
    children (and an unsanitized root equals n), solved through the sparse KKT system.
    """
    check_uniform_depth(tree)
    expansion = _Expansion(tree)
    expansion.node(tree.root, -1)
    parent = np.array(expansion.parent)
    y = np.array(expansion.value)
    observed = np.array(expansion.observed, dtype=np.float64)
    V = y.size

    internal = np.unique(parent[parent >= 0])
    row_of = {int(u): i for i, u in enumerate(internal)}
    rows, cols, vals = [], [], []
    for u in internal:
        rows.append(row_of[int(u)]); cols.append(int(u)); vals.append(1.0)
    for v in np.flatnonzero(parent >= 0):
        rows.append(row_of[int(parent[v])]); cols.append(int(v)); vals.append(-1.0)
    n_cons = internal.size
    rhs_cons = [0.0] * n_cons
    if tree.root.noisy_count is None:
        rows.append(n_cons); cols.append(0); vals.append(1.0)
        rhs_cons.append(float(tree.root.true_count))
        n_cons += 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n_cons, V))

    kkt = sp.bmat([[sp.diags(2.0 * observed), A.T], [A, None]], format="csc")
    rhs = np.concatenate([2.0 * observed * y, rhs_cons])
    solution = spsolve(kkt, rhs)[:V]
    if not np.all(np.isfinite(solution)):
        raise ConsistencyError("least-squares oracle hit a singular system")

    out = copy_sanitized(tree)
    cursor = iter(range(V))

    def assign(node):
        index = next(cursor)
        node.consistent_count = float(solution[index])
        if node.is_phantom:
            # skip the implicit phantom subtree
            for _ in range(_phantom_size(out, node.layer) - 1):
                next(cursor)
            return
        for child in node.children:
            assign(child)
        if node.block is not None:
            start = next(cursor)
            block_values = solution[start:start + node.block.padded_size]
            for _ in range(node.block.padded_size - 1):
                next(cursor)
            node.block.consistent = block_values[: node.block.size].copy()
            node.block.pad_share = float(block_values[-1]) if node.block.padded_size > node.block.size else 0.0

    assign(out.root)
    return out


def _phantom_size(tree, layer):
    if layer == tree.L:
        return 1 + tree.padded_block_size if tree.has_blocks else 1
    return 1 + tree.b * _phantom_size(tree, layer + 1)

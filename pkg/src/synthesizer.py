"""Synthesis drivers: STEPS-L, Random-Partition-L and the one-step Laplace sanitizer.

The tree is built once on the confidential data and cloned for every replicate. The
whole plan is charged to the ledger, in canonical (replicate, layer) order, before any
noise is drawn; replicates then run independently on their own noise streams, so the
output does not depend on the thread count.
"""
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from config.paths_config import *
from config.synthesis_config import SYNTHESIS_CONFIG
from src.consistency import check_consistency, make_consistent
from src.custom_exception import ConfigError, CustomException, DataIOError
from src.data_ingestion import write_csv
from src.dataset import CategoricalDataset, Schema, dataset_from_counts, full_table_counts
from src.dp_core import BudgetLedger, NoiseSource, RandomSource, Sensitivity, as_generator, sanitize_counts
from src.logger import get_logger
from src.sanitization_plan import SanitizationPlan
from src.steps_tree import PartitionTree, build_tree, pad_phantoms, random_partition_tree, tree_audit

logger = get_logger(__name__)

METHODS = ("steps", "random-partition", "laplace-full")
UNIT_SENSITIVITY = Sensitivity(1.0)
# released counts this close to whole numbers are treated as exact
WHOLE_TOLERANCE = 1e-6


@dataclass(eq=False)
class SynthesisResult:
    method: str
    plan: SanitizationPlan
    replicates: List[CategoricalDataset]
    released_counts: List[np.ndarray]
    ledger: BudgetLedger
    tree: Optional[PartitionTree] = None
    released_trees: List[PartitionTree] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def schema(self) -> Schema:
        return self.replicates[0].schema

    def audit(self, debug: bool = False) -> Optional[dict]:
        if self.tree is None:
            return None
        return tree_audit(self.tree, self.released_trees, debug=debug)


def layer_label(replicate: int, layer: int) -> str:
    return f"replicate-{replicate}/layer-{layer}"


def sanitized_layers(tree: PartitionTree) -> List[int]:
    return list(range(1, tree.L + 2 if tree.has_blocks else tree.L + 1))


def charge_plan(ledger: BudgetLedger, plan: SanitizationPlan, layers: List[int]) -> None:
    """Record the spend of every (replicate, layer) release up front; overspend aborts here."""
    for r in range(plan.m):
        for layer in layers:
            label = layer_label(r, layer)
            # nodes of one layer hold disjoint records, so the layer is one parallel group
            ledger.charge(label, plan.layer_budget(layer).epsilon, group=label)


def sanitize_tree(tree: PartitionTree, plan: SanitizationPlan, replicate: int, src: NoiseSource) -> PartitionTree:
    """Clone of `tree` with noisy counts on layers 1..L and on every leaf block cell.

    Every layer draws one noise vector from stream (replicate, layer) in canonical node
    order. Phantoms draw nothing and the root stays unsanitized.
    """
    out = tree.clone()
    layers = out.layers()
    for layer in range(1, out.L + 1):
        nodes = [node for node in layers[layer] if not node.is_phantom]
        true = np.array([node.true_count for node in nodes], dtype=np.float64)
        noisy = sanitize_counts(true, UNIT_SENSITIVITY, plan.layer_budget(layer), src.child(replicate, layer))
        for node, value in zip(nodes, noisy):
            node.noisy_count = float(value)
        for node in layers[layer]:
            if node.is_phantom:
                node.noisy_count = 0.0

    if out.has_blocks:
        layer = out.L + 1
        leaves = out.leaf_nodes()
        true = np.concatenate([node.block.true_counts for node in leaves]).astype(np.float64)
        noisy = sanitize_counts(true, UNIT_SENSITIVITY, plan.layer_budget(layer), src.child(replicate, layer))
        offset = 0
        for node in leaves:
            node.block.noisy = noisy[offset:offset + node.block.size]
            offset += node.block.size
    return out


def released_full_table(tree: PartitionTree) -> np.ndarray:
    """Consistent counts of the real leaf cells, placed at their full-table index."""
    counts = np.zeros(tree.schema.n_cells, dtype=np.float64)
    for node in tree.leaf_nodes():
        if node.block is not None:
            counts[node.block.cell_index] = node.block.consistent
        else:
            counts[node.cell] = node.consistent_count
    return counts


def counts_to_records(
    schema: Schema,
    counts: np.ndarray,
    n: int,
    src: RandomSource,
    phantom: Optional[np.ndarray] = None,
) -> CategoricalDataset:
    """Turn released full-table counts into n records, listed in cell-index order.

    Negative counts are clamped to 0 and phantom cells zeroed. Counts that are already
    whole numbers summing to n are emitted as they are; otherwise n records are drawn
    from the multinomial proportional to the clamped counts (uniform over real cells
    when nothing is left).
    """
    if n < 0:
        raise ConfigError(f"record count must be non-negative, got {n}")
    clamped = np.clip(np.asarray(counts, dtype=np.float64).reshape(-1), 0.0, None)
    real = np.ones(clamped.size, dtype=bool) if phantom is None else ~np.asarray(phantom, dtype=bool)
    clamped[~real] = 0.0

    rounded = np.rint(clamped)
    if np.all(np.abs(clamped - rounded) <= WHOLE_TOLERANCE) and int(rounded.sum()) == n:
        return dataset_from_counts(schema, rounded.astype(np.int64))

    total = clamped.sum()
    if total <= 0:
        logger.warning("All released counts are zero after clamping, emitting records uniformly over real cells")
        clamped = real.astype(np.float64)
        total = clamped.sum()
    draws = as_generator(src).multinomial(n, clamped / total)
    return dataset_from_counts(schema, draws)


def _emit(schema, counts, n, src, replicate) -> CategoricalDataset:
    return counts_to_records(schema, counts, n, src.child(replicate, "emit"))


def _run_replicates(worker, m: int, threads: int) -> list:
    if threads > 1 and m > 1:
        with ThreadPoolExecutor(max_workers=min(threads, m)) as pool:
            return list(pool.map(worker, range(m)))
    return [worker(r) for r in range(m)]


def _tree_synthesize(
    data: CategoricalDataset,
    plan: SanitizationPlan,
    tree: PartitionTree,
    ledger: Optional[BudgetLedger],
    threads: int,
    timings: Dict[str, float],
) -> SynthesisResult:
    pad_phantoms(tree)
    ledger = BudgetLedger(plan.epsilon) if ledger is None else ledger
    charge_plan(ledger, plan, sanitized_layers(tree))
    src = NoiseSource(plan.seed, (tree.method,))

    def replicate(r):
        released = make_consistent(sanitize_tree(tree, plan, r, src))
        residual = check_consistency(released)
        counts = released_full_table(released)
        dropped = released.root.consistent_count - counts.sum()
        if abs(dropped) > WHOLE_TOLERANCE:
            logger.warning(f"Replicate {r}: zeroing phantom cells removed {dropped:.6g} of the released total")
        logger.info(f"Replicate {r} released with consistency residual {residual:.3g}")
        return released, counts, _emit(data.schema, counts, data.n, src, r)

    start = time.perf_counter()
    outputs = _run_replicates(replicate, plan.m, threads)
    timings["replicates"] = time.perf_counter() - start
    return SynthesisResult(
        method=tree.method,
        plan=plan,
        replicates=[o[2] for o in outputs],
        released_counts=[o[1] for o in outputs],
        ledger=ledger,
        tree=tree,
        released_trees=[o[0] for o in outputs],
        timings=timings,
    )


def steps_synthesize(
    data: CategoricalDataset,
    plan: SanitizationPlan,
    ledger: Optional[BudgetLedger] = None,
    dense_threshold: int = SYNTHESIS_CONFIG["dense_threshold"],
    threads: int = 1,
) -> SynthesisResult:
    start = time.perf_counter()
    tree = build_tree(data, plan, dense_threshold=dense_threshold, threads=threads)
    timings = {"build_tree": time.perf_counter() - start}
    return _tree_synthesize(data, plan, tree, ledger, threads, timings)


def random_partition_synthesize(
    data: CategoricalDataset,
    plan: SanitizationPlan,
    ledger: Optional[BudgetLedger] = None,
    dense_threshold: int = SYNTHESIS_CONFIG["dense_threshold"],
    threads: int = 1,
) -> SynthesisResult:
    start = time.perf_counter()
    tree = random_partition_tree(data, plan, dense_threshold=dense_threshold, threads=threads)
    timings = {"build_tree": time.perf_counter() - start}
    return _tree_synthesize(data, plan, tree, ledger, threads, timings)


def laplace_full_synthesize(
    data: CategoricalDataset,
    epsilon: float,
    m: int,
    seed: int = 0,
    ledger: Optional[BudgetLedger] = None,
    dense_threshold: int = SYNTHESIS_CONFIG["dense_threshold"],
    threads: int = 1,
) -> SynthesisResult:
    """Laplace noise of scale m/epsilon on every cell of the full cross-tabulation."""
    # a one-layer plan carries epsilon, m and seed for the manifest
    plan = SanitizationPlan(1, (1.0,), m, epsilon, seed)
    true = full_table_counts(data, dense_threshold).astype(np.float64)
    ledger = BudgetLedger(epsilon) if ledger is None else ledger
    for r in range(m):
        label = f"replicate-{r}/full-table"
        ledger.charge(label, plan.replicate_budget.epsilon, group=label)
    src = NoiseSource(seed, ("laplace-full",))

    def replicate(r):
        noisy = sanitize_counts(true, UNIT_SENSITIVITY, plan.replicate_budget, src.child(r, "full-table"))
        return noisy, _emit(data.schema, noisy, data.n, src, r)

    start = time.perf_counter()
    outputs = _run_replicates(replicate, m, threads)
    logger.info(f"Laplace-full released {m} replicates over {true.size} cells")
    return SynthesisResult(
        method="laplace-full",
        plan=plan,
        replicates=[o[1] for o in outputs],
        released_counts=[o[0] for o in outputs],
        ledger=ledger,
        timings={"replicates": time.perf_counter() - start},
    )


def synthesize(
    data: CategoricalDataset,
    method: str,
    plan: SanitizationPlan,
    ledger: Optional[BudgetLedger] = None,
    dense_threshold: int = SYNTHESIS_CONFIG["dense_threshold"],
    threads: int = 1,
) -> SynthesisResult:
    if method == "steps":
        return steps_synthesize(data, plan, ledger, dense_threshold, threads)
    if method == "random-partition":
        return random_partition_synthesize(data, plan, ledger, dense_threshold, threads)
    if method == "laplace-full":
        return laplace_full_synthesize(data, plan.epsilon, plan.m, plan.seed, ledger, dense_threshold, threads)
    raise ConfigError(f"unknown method '{method}', expected one of {METHODS}")


def _dump(payload, path: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise DataIOError(f"cannot write {path}", e)


def _epsilon(value: float):
    return "inf" if math.isinf(value) else value


def build_manifest(result: SynthesisResult, replicate_files: List[str], config: Optional[dict] = None) -> dict:
    """Everything needed to replay the run; no wall-clock values."""
    return {
        "method": result.method,
        "plan": result.plan.to_dict(),
        "seed": result.plan.seed,
        "n": result.replicates[0].n,
        "schema": result.schema.to_dict(),
        "ledger": result.ledger.to_list(),
        "ledger_total": _epsilon(result.ledger.total),
        "epsilon": _epsilon(result.plan.epsilon),
        "tree_audit": TREE_AUDIT_FILE if result.tree is not None else None,
        "replicates": replicate_files,
        "config": config,
    }


def write_outputs(result: SynthesisResult, output_dir: str, config: Optional[dict] = None, debug: bool = False) -> dict:
    os.makedirs(output_dir, exist_ok=True)
    files = []
    for r, replicate in enumerate(result.replicates):
        name = REPLICATE_FILE_PATTERN.format(index=r + 1)
        write_csv(replicate, os.path.join(output_dir, name))
        files.append(name)

    manifest = build_manifest(result, files, config)
    _dump(manifest, os.path.join(output_dir, MANIFEST_FILE))
    result.ledger.export(os.path.join(output_dir, LEDGER_FILE))
    _dump(result.timings, os.path.join(output_dir, TIMINGS_FILE))
    if result.tree is not None:
        _dump(result.audit(debug=debug), os.path.join(output_dir, TREE_AUDIT_FILE))
    logger.info(f"Wrote {len(files)} replicates and the run manifest to {output_dir}")
    return manifest


class Synthesizer:
    def __init__(self, data, plan, method="steps", output_dir=SYNTHETIC_DIR, threads=1,
                 dense_threshold=SYNTHESIS_CONFIG["dense_threshold"], budget_limit=None, config=None, debug=False):
        self.data = data
        self.plan = plan
        self.method = method
        self.output_dir = output_dir
        self.threads = threads
        self.dense_threshold = dense_threshold
        self.budget_limit = plan.epsilon if budget_limit is None else budget_limit
        self.config = config
        self.debug = debug
        self.result = None

        os.makedirs(self.output_dir, exist_ok=True)
        logger.info("Synthesizer initialized.....")

    def synthesize(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method '{self.method}', expected one of {METHODS}")
        if self.method != "laplace-full":
            self.plan.check_schema(self.data.schema.p)
        ledger = BudgetLedger(self.budget_limit)
        self.result = synthesize(self.data, self.method, self.plan, ledger, self.dense_threshold, self.threads)
        logger.info(f"Privacy spent {self.result.ledger.total} of {self.plan.epsilon}")
        return self.result

    def save_outputs(self):
        return write_outputs(self.result, self.output_dir, self.config, self.debug)

    def run(self):
        try:
            logger.info("Starting synthesis pipeline....")
            self.synthesize()
            manifest = self.save_outputs()
            logger.info("End of synthesis pipeline...")
            return manifest

        except CustomException as e:
            logger.error(f"Error while synthesis pipeline {e.message}")
            raise
        except Exception as e:
            logger.error(f"Error while synthesis pipeline {e}")
            raise CustomException(str(e), e)

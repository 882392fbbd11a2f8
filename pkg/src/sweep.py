"""Epsilon sweep: repeated synthesis per (method, epsilon) with SPECKS and l1 summaries."""
import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import mlflow
import numpy as np
from scipy.stats import spearmanr
from tqdm.auto import tqdm

from config.paths_config import *
from config.synthesis_config import MLFLOW_EXPERIMENT
from src.custom_exception import ConfigError, DataIOError
from src.dataset import CategoricalDataset, full_table_counts
from src.logger import get_logger
from src.sanitization_plan import SanitizationPlan
from src.specks import specks
from src.synthesizer import METHODS, synthesize
from src.utility import l1_counts

logger = get_logger(__name__)

TREND_ALPHA = 0.05


@dataclass
class SweepCell:
    method: str
    epsilon: float
    ks: List[float] = field(default_factory=list)
    l1: List[float] = field(default_factory=list)

    @property
    def mean_ks(self) -> float:
        return float(np.mean(self.ks))

    @property
    def mean_l1(self) -> float:
        return float(np.mean(self.l1))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "epsilon": self.epsilon,
            "mean_ks": self.mean_ks,
            "mean_l1": self.mean_l1,
            "ks": self.ks,
            "l1": self.l1,
        }


def trend_test(cells: Sequence[SweepCell], metric: str) -> Dict[str, float]:
    """Spearman correlation between epsilon rank and the per-repetition metric."""
    ranks, values = [], []
    for rank, cell in enumerate(sorted(cells, key=lambda c: c.epsilon)):
        observed = getattr(cell, metric)
        ranks.extend([rank] * len(observed))
        values.extend(observed)
    if len(set(ranks)) < 2 or len(set(values)) < 2:
        return {"rho": float("nan"), "p_value": float("nan"), "non_increasing": False}
    rho, p_value = spearmanr(ranks, values)
    return {"rho": float(rho), "p_value": float(p_value), "non_increasing": bool(rho < 0 and p_value < TREND_ALPHA)}


@dataclass
class SweepReport:
    cells: List[SweepCell]
    repetitions: int
    m: int
    L: int

    def trends(self) -> Dict[str, dict]:
        out = {}
        for method in sorted({c.method for c in self.cells}):
            cells = [c for c in self.cells if c.method == method]
            out[method] = {"ks": trend_test(cells, "ks"), "l1": trend_test(cells, "l1")}
        return out

    def to_dict(self) -> dict:
        return {
            "repetitions": self.repetitions,
            "m": self.m,
            "L": self.L,
            "cells": [c.to_dict() for c in self.cells],
            "trends": self.trends(),
        }

    def format_table(self) -> str:
        lines = [f"{'method':<18}{'epsilon':>10}{'mean ks':>12}{'mean l1':>14}"]
        for c in self.cells:
            lines.append(f"{c.method:<18}{c.epsilon:>10.4f}{c.mean_ks:>12.4f}{c.mean_l1:>14.1f}")
        return "\n".join(lines)


def run_sweep(
    data: CategoricalDataset,
    methods: Sequence[str],
    epsilons: Sequence[float],
    repetitions: int,
    L: int,
    allocation,
    m: int,
    seed: int,
    dense_threshold: int,
    threads: int = 1,
    track: bool = False,
) -> SweepReport:
    unknown = [x for x in methods if x not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}, expected a subset of {list(METHODS)}")
    truth = full_table_counts(data, dense_threshold).astype(np.float64)
    cells = []
    if track:
        mlflow.set_tracking_uri(MLRUNS_URI)
        mlflow.set_experiment(MLFLOW_EXPERIMENT)

    grid = [(method, eps) for method in methods for eps in epsilons]
    for method, eps in tqdm(grid, desc="Epsilon sweep"):
        cell = SweepCell(method, eps)
        for rep in range(repetitions):
            plan = SanitizationPlan.build(L, allocation, m, eps, data.schema.p, seed + rep)
            result = synthesize(data, method, plan, dense_threshold=dense_threshold, threads=threads)
            cell.ks.append(specks(data, result.replicates, threads=threads).mean_ks)
            # released counts, before the multinomial record draw
            cell.l1.append(float(np.mean([l1_counts(c, truth) for c in result.released_counts])))
        logger.info(f"Sweep {method} at epsilon {eps:.4f}: mean KS {cell.mean_ks:.4f}, mean l1 {cell.mean_l1:.1f}")
        if track:
            with mlflow.start_run(run_name=f"{method}-eps-{eps:.4f}"):
                mlflow.log_param("method", method)
                mlflow.log_param("epsilon", eps)
                mlflow.log_param("repetitions", repetitions)
                mlflow.log_metric("mean_ks", cell.mean_ks)
                mlflow.log_metric("mean_l1", cell.mean_l1)
        cells.append(cell)
    return SweepReport(cells, repetitions, m, L)


def save_sweep_report(report: SweepReport, output_dir: str) -> str:
    os.makedirs(output_dir, exist_ok=True)
    path = os.path.join(output_dir, SWEEP_REPORT_FILE)
    payload = report.to_dict()
    for cell in payload["cells"]:
        cell["epsilon"] = "inf" if math.isinf(cell["epsilon"]) else cell["epsilon"]
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise DataIOError(f"cannot write {path}", e)
    logger.info(f"Sweep report saved to {path}")
    return path

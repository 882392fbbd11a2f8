"""Feasibility analytics: full-table l1 distance and pairwise chi-squared consistency rates."""
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaincc

from config.synthesis_config import SYNTHESIS_CONFIG
from src.custom_exception import ConfigError, SchemaError
from src.dataset import CategoricalDataset, cross_tabulate
from src.logger import get_logger
from src.specks import SpecksResult

logger = get_logger(__name__)

COMBINATION_RULES: Dict[str, Callable[[np.ndarray], float]] = {
    "median": lambda p: float(np.median(p)),
    "mean": lambda p: float(np.mean(p)),
    "min": lambda p: float(np.min(p)),
    "max": lambda p: float(np.max(p)),
}

CombinationRule = Union[str, Callable[[np.ndarray], float]]


def _check_schemas(original: CategoricalDataset, replicates: Sequence[CategoricalDataset]) -> None:
    if not replicates:
        raise SchemaError("need at least one synthetic replicate")
    for replicate in replicates:
        if replicate.schema != original.schema:
            raise SchemaError("synthetic replicate does not match the original schema")


def l1_counts(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).sum())


def _cell_counts(data: CategoricalDataset) -> Dict[int, int]:
    cells, counts = np.unique(data.flat_index(), return_counts=True)
    return dict(zip(cells.tolist(), counts.tolist()))


def l1_distance(original: CategoricalDataset, replicates: Sequence[CategoricalDataset]) -> Tuple[Tuple[float, ...], float]:
    """Sum over all full-table cells of |synthetic - original|, per replicate and averaged.

    Only occupied cells are visited, so the full table never has to be materialized.
    """
    _check_schemas(original, replicates)
    base = _cell_counts(original)
    per_replicate = []
    for replicate in replicates:
        other = _cell_counts(replicate)
        keys = base.keys() | other.keys()
        per_replicate.append(float(sum(abs(base.get(k, 0) - other.get(k, 0)) for k in keys)))
    return tuple(per_replicate), float(np.mean(per_replicate))


def chisq_statistic(table: np.ndarray) -> Tuple[float, int]:
    """Pearson statistic sum (O - E)^2 / E and its degrees of freedom, after dropping empty rows/columns."""
    table = np.asarray(table, dtype=np.float64)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    rows, cols = table.shape
    if rows < 2 or cols < 2:
        raise ValueError(f"degenerate two-way table ({rows}x{cols} after dropping empty margins)")
    expected = np.outer(table.sum(axis=1), table.sum(axis=0)) / table.sum()
    return float(((table - expected) ** 2 / expected).sum()), (rows - 1) * (cols - 1)


def chisq_test(table: np.ndarray) -> Tuple[float, float, int]:
    """(statistic, p-value, df) with the p-value from the upper regularized incomplete gamma."""
    stat, df = chisq_statistic(table)
    return stat, float(gammaincc(df / 2.0, stat / 2.0)), df


def _two_way(data: CategoricalDataset, pair: Tuple[int, int]) -> np.ndarray:
    return cross_tabulate(data, pair).to_dense()


def _combine(rule: CombinationRule) -> Callable[[np.ndarray], float]:
    if callable(rule):
        return rule
    try:
        return COMBINATION_RULES[rule]
    except KeyError:
        raise ConfigError(f"unknown p-value combination rule '{rule}', expected one of {sorted(COMBINATION_RULES)}")


@dataclass(frozen=True)
class PairDecision:
    attributes: Tuple[str, str]
    original_p: float
    synthetic_p: float
    replicate_p: Tuple[float, ...]

    def significant(self, alpha: float) -> Tuple[bool, bool]:
        return self.original_p < alpha, self.synthetic_p < alpha

    def to_dict(self, alphas: Sequence[float]) -> dict:
        return {
            "attributes": list(self.attributes),
            "original_p": self.original_p,
            "synthetic_p": self.synthetic_p,
            "replicate_p": list(self.replicate_p),
            "decisions": {str(a): list(self.significant(a)) for a in alphas},
        }


@dataclass(frozen=True)
class ChisqReport:
    alphas: Tuple[float, ...]
    rates: Dict[float, float]
    pairs: Tuple[PairDecision, ...]
    excluded: Tuple[Tuple[str, str], ...]
    total_pairs: int
    combination_rule: str

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def to_dict(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "rates": {str(a): r for a, r in self.rates.items()},
            "n_pairs": self.n_pairs,
            "total_pairs": self.total_pairs,
            "excluded": [list(p) for p in self.excluded],
            "combination_rule": self.combination_rule,
            "pairs": [p.to_dict(self.alphas) for p in self.pairs],
        }


def chisq_consistency(
    original: CategoricalDataset,
    replicates: Sequence[CategoricalDataset],
    alphas: Sequence[float] = tuple(SYNTHESIS_CONFIG["alphas"]),
    combination_rule: CombinationRule = SYNTHESIS_CONFIG["combination_rule"],
    threads: int = 1,
) -> ChisqReport:
    """Agreement of significance decisions between original and synthetic 2-way chi-squared tests."""
    _check_schemas(original, replicates)
    schema = original.schema
    if schema.p < 2:
        raise ConfigError("chi-squared consistency needs at least 2 attributes")
    if any(not 0 < a < 1 for a in alphas):
        raise ConfigError(f"alphas must lie in (0, 1), got {list(alphas)}")
    combine = _combine(combination_rule)
    all_pairs = list(itertools.combinations(range(schema.p), 2))

    def evaluate(pair):
        names = (schema.names[pair[0]], schema.names[pair[1]])
        try:
            _, original_p, _ = chisq_test(_two_way(original, pair))
        except ValueError as e:
            logger.warning(f"Pair {names} excluded: original {e}")
            return names, None
        replicate_p = []
        for replicate in replicates:
            try:
                replicate_p.append(chisq_test(_two_way(replicate, pair))[1])
            except ValueError:
                # no association can be shown on a degenerate synthetic table
                replicate_p.append(1.0)
        p = np.array(replicate_p)
        return names, PairDecision(names, original_p, combine(p), tuple(replicate_p))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(evaluate, all_pairs))
    else:
        outputs = [evaluate(pair) for pair in all_pairs]

    pairs = tuple(d for _, d in outputs if d is not None)
    excluded = tuple(names for names, d in outputs if d is None)
    rates = {}
    for alpha in alphas:
        agree = sum(1 for d in pairs if len(set(d.significant(alpha))) == 1)
        rates[alpha] = agree / len(pairs) if pairs else float("nan")
    rule_name = combination_rule if isinstance(combination_rule, str) else getattr(combination_rule, "__name__", "custom")
    logger.info(f"Chi-squared consistency over {len(pairs)} of {len(all_pairs)} pairs: {rates}")
    return ChisqReport(tuple(alphas), rates, pairs, excluded, len(all_pairs), rule_name)


@dataclass
class UtilityReport:
    alphas: Tuple[float, ...] = tuple(SYNTHESIS_CONFIG["alphas"])
    l1_per_replicate: Tuple[float, ...] = ()
    mean_l1: Optional[float] = None
    chisq: Optional[ChisqReport] = None
    specks: Optional[SpecksResult] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"alphas": list(self.alphas), "notes": list(self.notes)}
        if self.specks is not None:
            out["specks"] = self.specks.to_dict()
        if self.mean_l1 is not None:
            out["l1"] = {"per_replicate": list(self.l1_per_replicate), "mean": self.mean_l1}
        if self.chisq is not None:
            out["chisq"] = self.chisq.to_dict()
        return out

    def format_table(self) -> str:
        lines = [f"{'metric':<28}{'value':>14}"]
        if self.specks is not None:
            for r, ks in enumerate(self.specks.per_replicate_ks):
                lines.append(f"{f'specks ks (replicate {r + 1})':<28}{ks:>14.4f}")
            lines.append(f"{'specks mean ks':<28}{self.specks.mean_ks:>14.4f}")
        if self.mean_l1 is not None:
            lines.append(f"{'l1 mean':<28}{self.mean_l1:>14.1f}")
        if self.chisq is not None:
            for alpha, rate in self.chisq.rates.items():
                lines.append(f"{f'chisq consistency a={alpha}':<28}{rate:>14.4f}")
            lines.append(f"{'chisq pairs tested':<28}{self.chisq.n_pairs:>14d}")
        return "\n".join(lines)

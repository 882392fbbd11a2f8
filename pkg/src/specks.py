"""SPECKS utility: propensity scores of original vs synthetic records, compared by KS distance.

The logistic model is fitted on the distinct cells of the stacked data with binomial
counts, which is the same likelihood as the record-level fit and makes the result
independent of record order.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import expit
from sklearn.preprocessing import OneHotEncoder, PolynomialFeatures

from config.synthesis_config import PROPENSITY_CONFIG
from src.custom_exception import SchemaError
from src.dataset import CategoricalDataset, Schema
from src.logger import get_logger

logger = get_logger(__name__)

SCORE_FLOOR = 1e-15


@dataclass(eq=False)
class PropensityFit:
    coefficients: np.ndarray
    scores: np.ndarray
    converged: bool
    iterations: int
    columns: Tuple[str, ...] = ()
    dropped: Tuple[str, ...] = ()
    n_original: int = 0

    @property
    def original_scores(self) -> np.ndarray:
        return self.scores[: self.n_original]

    @property
    def synthetic_scores(self) -> np.ndarray:
        return self.scores[self.n_original:]


@dataclass(frozen=True)
class SpecksResult:
    per_replicate_ks: Tuple[float, ...]
    mean_ks: float
    converged: Tuple[bool, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "per_replicate_ks": list(self.per_replicate_ks),
            "mean_ks": self.mean_ks,
            "converged": list(self.converged),
            "scores": "direct propensity ECDFs (no matching step)",
        }


def design_matrix(schema: Schema, cells: np.ndarray, interactions: bool = False) -> Tuple[np.ndarray, List[str]]:
    """Intercept plus reference-coded dummies (first level is the reference)."""
    encoder = OneHotEncoder(
        categories=[np.arange(k) for k in schema.cardinalities],
        drop="first",
        sparse_output=False,
        dtype=np.float64,
    )
    dummies = encoder.fit_transform(cells)
    names = list(encoder.get_feature_names_out(list(schema.names)))
    if interactions:
        poly = PolynomialFeatures(degree=2, interaction_only=True, include_bias=False)
        dummies = poly.fit_transform(dummies)
        names = [n.replace(" ", ":") for n in poly.get_feature_names_out(names)]
    X = np.hstack([np.ones((cells.shape[0], 1)), dummies])
    return X, ["intercept"] + names


def _penalized_loglik(beta, X, pos, total, penalty):
    eta = X @ beta
    return float(pos @ eta - total @ np.logaddexp(0.0, eta) - 0.5 * beta @ (penalty * beta))


def fit_propensity(
    original: CategoricalDataset,
    synthetic: CategoricalDataset,
    ridge: float = PROPENSITY_CONFIG["ridge"],
    tol: float = PROPENSITY_CONFIG["tol"],
    max_iter: int = PROPENSITY_CONFIG["max_iter"],
    interactions: bool = PROPENSITY_CONFIG["interactions"],
) -> PropensityFit:
    """Ridge-penalized logistic regression of T (1 = original record) by Newton/IRLS."""
    if original.schema != synthetic.schema:
        raise SchemaError("original and synthetic data must share a schema")
    if original.n == 0 or synthetic.n == 0:
        raise SchemaError("propensity fit needs records in both groups")

    stacked = np.vstack([original.records, synthetic.records])
    cells, inverse = np.unique(stacked, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    pos = np.bincount(inverse[: original.n], minlength=cells.shape[0]).astype(np.float64)
    total = pos + np.bincount(inverse[original.n:], minlength=cells.shape[0])

    X, names = design_matrix(original.schema, cells, interactions)
    constant = np.ptp(X[:, 1:], axis=0) == 0
    dropped = tuple(name for name, c in zip(names[1:], constant) if c)
    if dropped:
        logger.warning(f"Dropped {len(dropped)} constant design columns: {list(dropped)}")
        keep = np.concatenate([[True], ~constant])
        X = X[:, keep]
        names = [name for name, k in zip(names, keep) if k]

    penalty = np.full(X.shape[1], ridge)
    penalty[0] = 0.0
    beta = np.zeros(X.shape[1])
    current = _penalized_loglik(beta, X, pos, total, penalty)
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        mu = expit(X @ beta)
        grad = X.T @ (pos - total * mu) - penalty * beta
        hessian = X.T @ ((total * mu * (1.0 - mu))[:, None] * X) + np.diag(penalty)
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hessian, grad, rcond=None)[0]

        # step halving keeps the penalized likelihood non-decreasing
        for _ in range(30):
            candidate = _penalized_loglik(beta + step, X, pos, total, penalty)
            if candidate >= current:
                break
            step = step / 2.0
        beta = beta + step
        current = max(current, candidate)

        if np.max(np.abs(step)) < tol:
            converged = True
            break

    if not converged:
        logger.warning(f"Propensity fit did not converge in {max_iter} iterations")
    cell_scores = np.clip(expit(X @ beta), SCORE_FLOOR, 1.0 - SCORE_FLOOR)
    return PropensityFit(
        coefficients=beta,
        scores=cell_scores[inverse],
        converged=converged,
        iterations=iterations,
        columns=tuple(names),
        dropped=dropped,
        n_original=original.n,
    )


def ks_distance(scores_original: Sequence[float], scores_synthetic: Sequence[float]) -> float:
    """sup over e of |F_orig(e) - F_syn(e)|, evaluated at every pooled score value."""
    a = np.sort(np.asarray(scores_original, dtype=np.float64))
    b = np.sort(np.asarray(scores_synthetic, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise SchemaError("KS distance needs two non-empty score vectors")
    points = np.concatenate([a, b])
    # right-continuous ECDFs, so ties contribute both one-sided gaps
    gap = np.searchsorted(a, points, side="right") / a.size - np.searchsorted(b, points, side="right") / b.size
    return float(np.max(np.abs(gap)))


def specks(
    original: CategoricalDataset,
    replicates: Sequence[CategoricalDataset],
    threads: int = 1,
    **fit_options,
) -> SpecksResult:
    if not replicates:
        raise SchemaError("SPECKS needs at least one synthetic replicate")

    def one(synthetic):
        fit = fit_propensity(original, synthetic, **fit_options)
        return ks_distance(fit.original_scores, fit.synthetic_scores), fit.converged

    if threads > 1 and len(replicates) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(one, replicates))
    else:
        outputs = [one(s) for s in replicates]

    per_replicate = tuple(ks for ks, _ in outputs)
    mean_ks = float(np.mean(per_replicate))
    logger.info(f"SPECKS mean KS {mean_ks:.4f} over {len(per_replicate)} replicates")
    return SpecksResult(per_replicate, mean_ks, tuple(c for _, c in outputs))

"""Column-row sampled approximations of ``a @ b`` for a CSR ``a``.

Pair ``i`` is column ``a[:, i]`` with row ``b[i, :]``; the full product is the
sum of their outer products. Two estimators are provided: deterministic top-k
(keep the k heaviest pairs, no rescaling) and the i.i.d. scaled sampler whose
expectation is the exact product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_io import make_rng
from .dense_core import frobenius_norm, row_norms, stable_rank
from .sparse_core import (
    CsrMatrix,
    ShapeError,
    csr_column_nnz,
    csr_column_norms,
    csr_frobenius,
    csr_select_columns,
    select_rows,
    spmm,
)


@dataclass(frozen=True)
class PairStats:
    products: np.ndarray
    probs: np.ndarray
    nnz_per_col: np.ndarray
    total_norm_product: float

    @property
    def n_pairs(self) -> int:
        return len(self.products)


@dataclass(frozen=True)
class TopKSelection:
    indices: np.ndarray
    k: int
    source_step: int = -1


def pair_stats_from_norms(
    col_norms: np.ndarray, row_norms_: np.ndarray, nnz_per_col: np.ndarray, total: float
) -> PairStats:
    products = col_norms * row_norms_
    s = products.sum()
    if s > 0:
        probs = products / s
    else:
        probs = np.full(len(products), 1.0 / max(len(products), 1))
    return PairStats(products, probs, nnz_per_col, total)


def pair_stats(a: CsrMatrix, b: np.ndarray) -> PairStats:
    if b.ndim != 2 or a.n_cols != b.shape[0]:
        raise ShapeError(f"a is {a.shape}, b is {b.shape}")
    return pair_stats_from_norms(
        csr_column_norms(a),
        row_norms(b),
        csr_column_nnz(a),
        csr_frobenius(a) * frobenius_norm(b),
    )


def topk_from_products(products: np.ndarray, k: int, source_step: int = -1) -> TopKSelection:
    n = len(products)
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside [0, {n}]")
    # stable sort on the negated key: equal products keep ascending index
    order = np.argsort(-products, kind="stable")
    return TopKSelection(np.sort(order[:k]), k, source_step)


def topk_indices(stats: PairStats, k: int, source_step: int = -1) -> TopKSelection:
    if not 1 <= k <= stats.n_pairs:
        raise ValueError(f"k={k} outside [1, {stats.n_pairs}]")
    return topk_from_products(stats.products, k, source_step)


def approx_spmm_topk(a: CsrMatrix, b: np.ndarray, sel: TopKSelection) -> np.ndarray:
    """Sum of the selected rank-1 terms, computed on the column-sliced operator."""
    if b.ndim != 2 or a.n_cols != b.shape[0]:
        raise ShapeError(f"a is {a.shape}, b is {b.shape}")
    sliced, cmap = csr_select_columns(a, sel.indices)
    return spmm(sliced, select_rows(b, cmap))


def approx_spmm_sliced(sliced: CsrMatrix, cmap: np.ndarray, b: np.ndarray) -> np.ndarray:
    return spmm(sliced, select_rows(b, cmap))


def approx_spmm_sampled(
    a: CsrMatrix,
    b: np.ndarray,
    k: int,
    rng: np.random.Generator,
    stats: PairStats | None = None,
) -> np.ndarray:
    """Unbiased estimate: k i.i.d. draws from ``probs``, each scaled by 1/(k p)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    stats = pair_stats(a, b) if stats is None else stats
    if not stats.products.sum() > 0:
        raise ValueError("all column-row norm products are zero")
    draws = rng.choice(stats.n_pairs, size=k, replace=True, p=stats.probs)
    picked, counts = np.unique(draws, return_counts=True)
    weights = counts / (k * stats.probs[picked])
    sliced, cmap = csr_select_columns(a, picked)
    return spmm(sliced, weights[:, None] * select_rows(b, cmap))


def relative_error(a: CsrMatrix, b: np.ndarray, approx: np.ndarray) -> float:
    num = frobenius_norm(spmm(a, b) - approx)
    den = csr_frobenius(a) * frobenius_norm(b)
    if den == 0.0:
        if num == 0.0:
            return 0.0
        raise ZeroDivisionError("zero-norm operands with nonzero discrepancy")
    return num / den


@dataclass(frozen=True)
class ErrorBoundReport:
    epsilon: float
    stable_rank_a: float
    stable_rank_b: float
    k_bound: int
    trials: int
    mean_error: float
    threshold: float
    topk_error: float

    @property
    def passed(self) -> bool:
        return self.mean_error <= self.threshold


def required_samples(epsilon: float, srank_a: float, srank_b: float, n: int, d: int) -> int:
    return max(1, math.ceil((srank_a + srank_b) * math.log(n + d) / epsilon**2))


def error_bound_check(
    a: CsrMatrix,
    b: np.ndarray,
    epsilon: float,
    trials: int = 200,
    rng: np.random.Generator | None = None,
) -> ErrorBoundReport:
    """Empirical check of E||ab - approx||_F <= 2 eps with k from the stable-rank bound.

    Both operands are rescaled to unit Frobenius norm first, which is the
    setting in which the 2*eps threshold is scale-free.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = make_rng(0, "sampling") if rng is None else rng
    a = a.with_values(a.val / csr_frobenius(a))
    b = b / frobenius_norm(b)
    sr_a = stable_rank(a.to_dense())
    sr_b = stable_rank(b)
    k = required_samples(epsilon, sr_a, sr_b, a.n_rows, b.shape[1])
    exact = spmm(a, b)
    stats = pair_stats(a, b)
    errs = [
        frobenius_norm(exact - approx_spmm_sampled(a, b, k, rng, stats))
        for _ in range(trials)
    ]
    k_top = min(k, a.n_cols)
    topk_err = frobenius_norm(exact - approx_spmm_topk(a, b, topk_indices(stats, k_top)))
    return ErrorBoundReport(
        epsilon, sr_a, sr_b, k, trials, float(np.mean(errs)), 2 * epsilon, topk_err
    )

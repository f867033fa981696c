"""Layer-wise sample-count allocation under a backward-SpMM FLOP budget.

For each layer l the backward product is ``op^T @ grad_l``. Keeping the top
``k_l`` column-row pairs costs ``sum(nnz_i for kept i) * d_l`` multiply-adds and
captures ``sum(products_i for kept i) / frob_denominator`` of the norm mass.
:func:`greedy_allocate` starts from full selection everywhere and repeatedly
shrinks the layer whose next step loses the least mass, until the total cost
fits ``C`` times the exact cost.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .approx import TopKSelection


@dataclass
class LayerProfile:
    layer_id: int
    products: np.ndarray
    nnz_per_col: np.ndarray
    d: int
    frob_denominator: float

    def __post_init__(self):
        self.products = np.asarray(self.products, dtype=np.float64)
        self.nnz_per_col = np.asarray(self.nnz_per_col, dtype=np.int64)
        if self.products.shape != self.nnz_per_col.shape:
            raise ValueError("products and nnz_per_col lengths differ")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        self._order: np.ndarray | None = None

    @property
    def n_pairs(self) -> int:
        return len(self.products)

    @property
    def order(self) -> np.ndarray:
        """Pair indices by descending product, ties by ascending index."""
        if self._order is None:
            self._order = np.argsort(-self.products, kind="stable")
        return self._order

    @property
    def weights(self) -> np.ndarray:
        if self.frob_denominator > 0:
            return self.products / self.frob_denominator
        return np.zeros_like(self.products)

    def selection(self, k: int, source_step: int = -1) -> TopKSelection:
        return TopKSelection(np.sort(self.order[:k]), k, source_step)

    def exact_flops(self) -> int:
        return int(self.nnz_per_col.sum()) * self.d


@dataclass
class AllocationPlan:
    k_per_layer: list[int]
    selections: list[TopKSelection]
    budget_C: float
    step_size_alpha: float
    step: int
    achieved_flops: int
    budget_flops: int
    infeasible: bool = False
    iterations: int = 0
    created_step: int = -1
    layer_ids: list[int] = field(default_factory=list)


def step_quantum(alpha: float, n: int) -> int:
    return max(1, int(round(alpha * n)))


def k_grid(n: int, step: int) -> list[int]:
    """Admissible k values, descending: n, n-step, ... with the last clamped to step."""
    ks = [n]
    while ks[-1] > step:
        ks.append(max(ks[-1] - step, step))
    return ks


def budget_flops_for(profiles: list[LayerProfile], C: float) -> int:
    # integer FLOP budget, nearest integer to C * exact cost
    return int(round(C * sum(p.exact_flops() for p in profiles)))


def flops_of_plan(profiles: list[LayerProfile], plan: AllocationPlan) -> int:
    if len(plan.selections) != len(profiles) or any(
        len(s.indices) != k for s, k in zip(plan.selections, plan.k_per_layer)
    ):
        raise ValueError("plan selections inconsistent with k_per_layer")
    return sum(
        int(p.nnz_per_col[s.indices].sum()) * p.d for p, s in zip(profiles, plan.selections)
    )


def objective_value(profiles: list[LayerProfile], plan: AllocationPlan) -> float:
    """Captured norm mass (the allocation objective, to be maximised)."""
    return float(sum(p.weights[s.indices].sum() for p, s in zip(profiles, plan.selections)))


def _make_plan(profiles, ks, C, alpha, step, budget, infeasible, iterations=0):
    selections = [p.selection(k) for p, k in zip(profiles, ks)]
    achieved = sum(
        int(p.nnz_per_col[s.indices].sum()) * p.d for p, s in zip(profiles, selections)
    )
    return AllocationPlan(
        k_per_layer=list(ks),
        selections=selections,
        budget_C=C,
        step_size_alpha=alpha,
        step=step,
        achieved_flops=achieved,
        budget_flops=budget,
        infeasible=infeasible,
        iterations=iterations,
        layer_ids=[p.layer_id for p in profiles],
    )


def _validate(profiles, C, alpha, n):
    if not 0 < C < 1:
        raise ValueError("budget C must lie in (0, 1)")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not profiles:
        raise ValueError("no layers to allocate")
    if any(p.n_pairs != n for p in profiles):
        raise ValueError("every profile must have |V| pairs")


def greedy_allocate(
    profiles: list[LayerProfile], C: float, alpha: float, n: int
) -> AllocationPlan:
    _validate(profiles, C, alpha, n)
    step = step_quantum(alpha, n)
    budget = budget_flops_for(profiles, C)

    # prefix sums over each layer's pairs in descending-product order
    mass = [np.concatenate([[0.0], np.cumsum(p.weights[p.order])]) for p in profiles]
    cost = [np.concatenate([[0], np.cumsum(p.nnz_per_col[p.order])]) * p.d for p in profiles]

    ks = [n] * len(profiles)
    used = sum(int(c[-1]) for c in cost)
    iterations = 0
    while used > budget:
        best, best_loss = -1, math.inf
        for l, k in enumerate(ks):
            if k <= step:
                continue
            k_new = max(k - step, step)
            loss = mass[l][k] - mass[l][k_new]
            if loss < best_loss:
                best, best_loss = l, loss
        if best < 0:
            return _make_plan(profiles, ks, C, alpha, step, budget, True, iterations)
        k_new = max(ks[best] - step, step)
        used -= int(cost[best][ks[best]] - cost[best][k_new])
        ks[best] = k_new
        iterations += 1
    plan = _make_plan(profiles, ks, C, alpha, step, budget, False, iterations)
    assert plan.achieved_flops <= plan.budget_flops
    return plan


def exhaustive_allocate(
    profiles: list[LayerProfile], C: float, alpha: float, n: int, limit: int = 10**6
) -> AllocationPlan:
    """Best feasible grid allocation by enumeration (ties -> largest k vector)."""
    _validate(profiles, C, alpha, n)
    step = step_quantum(alpha, n)
    grid = k_grid(n, step)
    if len(grid) ** len(profiles) > limit:
        raise ValueError("instance too large for exhaustive search")
    budget = budget_flops_for(profiles, C)
    mass = [np.concatenate([[0.0], np.cumsum(p.weights[p.order])]) for p in profiles]
    cost = [np.concatenate([[0], np.cumsum(p.nnz_per_col[p.order])]) * p.d for p in profiles]

    best_key, best_ks = None, None
    for ks in itertools.product(grid, repeat=len(profiles)):
        used = sum(int(c[k]) for c, k in zip(cost, ks))
        if used > budget:
            continue
        value = sum(float(m[k]) for m, k in zip(mass, ks))
        key = (value, ks)
        if best_key is None or key > best_key:
            best_key, best_ks = key, ks
    if best_ks is None:
        return _make_plan(profiles, [grid[-1]] * len(profiles), C, alpha, step, budget, True)
    return _make_plan(profiles, best_ks, C, alpha, step, budget, False)


def uniform_plan(profiles: list[LayerProfile], C: float, n: int) -> AllocationPlan:
    """Baseline allocation: k_l = C|V| for every layer, regardless of cost."""
    k = min(n, max(1, int(round(C * n))))
    return _make_plan(profiles, [k] * len(profiles), C, 0.0, 0, budget_flops_for(profiles, C), False)


def auc_match_score(previous: TopKSelection, current_products: np.ndarray) -> float:
    """ROC-AUC of ``current_products`` against membership in ``previous``.

    1.0 means every previously selected pair still outranks every unselected
    one; tied scores count one half.
    """
    n = len(current_products)
    k = len(previous.indices)
    if k == 0 or k == n:
        raise ValueError("AUC undefined when the selection is empty or complete")
    if np.any(previous.indices >= n):
        raise ValueError("selection index outside score vector")
    ranks = rankdata(current_products)  # average ranks handle ties
    rank_sum = ranks[previous.indices].sum()
    return float((rank_sum - k * (k + 1) / 2) / (k * (n - k)))

"""Backward-SpMM policies: budgeted top-k with allocation refresh, caching and switching."""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..allocator import AllocationPlan, LayerProfile, auc_match_score, greedy_allocate, uniform_plan
from ..approx import TopKSelection, approx_spmm_sampled, topk_from_products
from ..dense_core import row_norms
from ..sparse_core import (
    CsrMatrix,
    csr_column_nnz,
    csr_column_norms,
    csr_frobenius,
    csr_select_columns,
    select_rows,
    spmm,
)

MODES = ("exact", "rsc", "uniform")


@dataclass(frozen=True)
class BackwardPolicy:
    mode: str = "exact"
    budget_C: float = 0.1
    alloc_interval: int = 10
    cache_interval: int = 10
    switch_fraction: float = 0.8
    alpha: float = 0.02

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.mode != "exact" and not 0 < self.budget_C < 1:
            raise ValueError("budget_C must lie in (0, 1)")
        if self.alloc_interval < 1 or self.cache_interval < 1:
            raise ValueError("intervals must be >= 1")
        if not 0 < self.switch_fraction <= 1:
            raise ValueError("switch_fraction must lie in (0, 1]")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


def switch_active(step: int, total_steps: int, switch_fraction: float) -> bool:
    """True while the approximation should be used (the first fraction of training)."""
    if not 0 <= step < total_steps:
        raise ValueError("step outside [0, total_steps)")
    # small slack so e.g. 0.29 * 100 counts as 29, not 28.999...
    return step < math.floor(switch_fraction * total_steps + 1e-9)


@dataclass
class OperatorStats:
    """Per-slot constants of a transposed backward operator."""

    op: CsrMatrix
    d: int
    col_norms: np.ndarray
    nnz_per_col: np.ndarray
    frob: float

    @classmethod
    def of(cls, op: CsrMatrix, d: int) -> "OperatorStats":
        return cls(op, d, csr_column_norms(op), csr_column_nnz(op), csr_frobenius(op))

    def exact_flops(self) -> int:
        return self.op.nnz * self.d

    def products(self, g: np.ndarray) -> np.ndarray:
        return self.col_norms * row_norms(g)


@dataclass
class CacheEntry:
    sliced: CsrMatrix
    column_map: np.ndarray
    selection: TopKSelection
    source_step: int
    plan_step: int


@dataclass
class LayerCache:
    interval: int
    entries: dict[int, CacheEntry] = field(default_factory=dict)
    slicings: int = 0

    def fresh(self, slot: int, step: int, k: int, plan_step: int) -> CacheEntry | None:
        e = self.entries.get(slot)
        if e is None:
            return None
        if step - e.source_step >= self.interval:
            return None
        # a new allocation invalidates older slices
        if e.selection.k != k or e.plan_step != plan_step:
            return None
        return e


def cached_sliced_operator(
    slot: int,
    stats: OperatorStats,
    k: int,
    g: np.ndarray,
    step: int,
    cache: LayerCache,
    plan_step: int = -1,
    selection: TopKSelection | None = None,
) -> CacheEntry:
    """Return a fresh cached slice for ``slot`` or re-select and re-slice.

    ``selection`` (when given) is used on a miss instead of ranking the pairs
    of the current gradient ``g``.
    """
    hit = cache.fresh(slot, step, k, plan_step)
    if hit is not None:
        return hit
    if selection is None:
        selection = topk_from_products(stats.products(g), k, source_step=step)
    sliced, cmap = csr_select_columns(stats.op, selection.indices)
    entry = CacheEntry(sliced, cmap, selection, step, plan_step)
    cache.entries[slot] = entry
    cache.slicings += 1
    return entry


def build_profiles(
    stats: dict[int, OperatorStats], grad_row_norms: dict[int, np.ndarray]
) -> list[LayerProfile]:
    profiles = []
    for slot in sorted(stats):
        s = stats[slot]
        rn = grad_row_norms[slot]
        profiles.append(
            LayerProfile(
                layer_id=slot,
                products=s.col_norms * rn,
                nnz_per_col=s.nnz_per_col,
                d=s.d,
                frob_denominator=s.frob * float(np.sqrt(np.dot(rn, rn))),
            )
        )
    return profiles


def refresh_allocation(
    policy: BackwardPolicy,
    stats: dict[int, OperatorStats],
    grad_row_norms: dict[int, np.ndarray] | None,
    step: int,
    n_nodes: int,
) -> AllocationPlan | None:
    """New plan from the latest gradient row norms (``None`` if rsc has no snapshot yet)."""
    if policy.mode == "uniform":
        norms = grad_row_norms or {s: np.zeros(n_nodes) for s in stats}
        plan = uniform_plan(build_profiles(stats, norms), policy.budget_C, n_nodes)
        if grad_row_norms is None:
            plan.selections = None  # no ranking available; select on use
    elif policy.mode == "rsc":
        if grad_row_norms is None:
            return None
        plan = greedy_allocate(
            build_profiles(stats, grad_row_norms), policy.budget_C, policy.alpha, n_nodes
        )
    else:
        raise ValueError("exact mode has no allocation")
    plan.created_step = step
    return plan


class BackwardEngine:
    """Stateful backward-SpMM router used by the training loop.

    Call :meth:`begin_step` before each backward pass, then pass the engine
    itself as the model's ``bwd`` callable.
    """

    def __init__(
        self,
        policy: BackwardPolicy,
        ops: dict[int, tuple[CsrMatrix, int]],
        n_nodes: int,
        total_steps: int,
        track_stability: bool = True,
        stability_lag: int = 10,
    ):
        self.policy = policy
        self.stats = {slot: OperatorStats.of(op, d) for slot, (op, d) in ops.items()}
        self.n_nodes = n_nodes
        self.total_steps = total_steps
        self.track_stability = track_stability
        self.cache = LayerCache(policy.cache_interval)
        self.plan: AllocationPlan | None = None
        self.snapshot: dict[int, np.ndarray] | None = None
        self._pending: dict[int, np.ndarray] = {}
        self.stability_lag = stability_lag
        self._history: deque = deque(maxlen=stability_lag + 1)
        self.step = -1
        self.active = False
        self.alloc_ms = 0.0
        self.plan_refreshes = 0
        self.step_flops: dict[int, int] = {}
        self.step_auc: dict[int, float] = {}

    def exact_flops(self) -> int:
        return sum(s.exact_flops() for s in self.stats.values())

    def allocation_due(self, step: int) -> bool:
        return self.plan is None or step % self.policy.alloc_interval == 0

    def begin_step(self, step: int) -> None:
        self.step = step
        self.alloc_ms = 0.0
        self.step_flops = {}
        self.step_auc = {}
        self._current_sel: dict[int, TopKSelection] = {}
        if self.policy.mode == "exact" or not switch_active(
            step, self.total_steps, self.policy.switch_fraction
        ):
            self.active = False
            return
        if self.allocation_due(step):
            t0 = time.perf_counter()
            plan = refresh_allocation(self.policy, self.stats, self.snapshot, step, self.n_nodes)
            self.alloc_ms = 1e3 * (time.perf_counter() - t0)
            if plan is not None:
                self.plan = plan
                self.plan_refreshes += 1
        # rsc needs one gradient snapshot before its first plan; run exact until then
        self.active = self.plan is not None

    def k_for(self, slot: int) -> int:
        idx = self.plan.layer_ids.index(slot)
        return self.plan.k_per_layer[idx]

    def __call__(self, slot: int, g: np.ndarray) -> np.ndarray:
        stats = self.stats[slot]
        rn = row_norms(g)
        self._pending[slot] = rn
        if len(self._pending) == len(self.stats):
            self.snapshot, self._pending = self._pending, {}
        if not self.active:
            self.step_flops[slot] = stats.exact_flops()
            return spmm(stats.op, g)

        k = self.k_for(slot)
        plan_sel = None
        if self.plan.selections is not None and self.plan.created_step == self.step:
            plan_sel = self.plan.selections[self.plan.layer_ids.index(slot)]
        entry = cached_sliced_operator(
            slot, stats, k, g, self.step, self.cache, self.plan.created_step, plan_sel
        )
        if self.track_stability:
            self._track(slot, stats.col_norms * rn, k)
        self.step_flops[slot] = entry.sliced.nnz * stats.d
        return spmm(entry.sliced, select_rows(g, entry.column_map))

    def _track(self, slot: int, products: np.ndarray, k: int) -> None:
        if 0 < k < self.n_nodes:
            self._current_sel[slot] = topk_from_products(products, k, self.step)
            lag = self.step - self.stability_lag
            for past_step, sels in self._history:
                if past_step == lag and slot in sels:
                    self.step_auc[slot] = auc_match_score(sels[slot], products)

    def end_step(self) -> None:
        if self.active and self.track_stability:
            self._history.append((self.step, self._current_sel))


class SampledBackward:
    """Unbiased scaled column-row sampler for every slot (k pairs per product)."""

    def __init__(self, ops: dict[int, CsrMatrix], k: int, rng: np.random.Generator):
        self.ops = ops
        self.k = k
        self.rng = rng

    def __call__(self, slot: int, g: np.ndarray) -> np.ndarray:
        return approx_spmm_sampled(self.ops[slot], g, self.k, self.rng)


class TopKBackward:
    """Fixed per-slot k, top-k selected from the current gradient, no caching."""

    def __init__(self, ops: dict[int, CsrMatrix], k: dict[int, int]):
        self.stats = {s: OperatorStats.of(op, 1) for s, op in ops.items()}
        self.k = k

    def __call__(self, slot: int, g: np.ndarray) -> np.ndarray:
        st = self.stats[slot]
        sel = topk_from_products(st.products(g), self.k[slot])
        sliced, cmap = csr_select_columns(st.op, sel.indices)
        return spmm(sliced, select_rows(g, cmap))

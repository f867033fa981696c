"""GCN and GraphSAGE(mean) with hand-written forward/backward passes.

The forward pass is always exact. Each backward sparse product is routed
through a callable ``bwd(slot, grad) -> op_T @ grad`` so the caller decides
whether it is exact, top-k, sampled, cached, ...; ``slot`` identifies the
layer whose aggregation is being differentiated and ``backward_ops()`` lists
the transposed operator and column width for every slot.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .. import flops
from ..dense_core import matmul, relu, relu_backward, xavier_init
from ..sparse_core import (
    CsrMatrix,
    csr_from_arrays,
    csr_transpose,
    row_normalize,
    spmm,
    spmm_mean,
)

BackwardSpmm = Callable[[int, np.ndarray], np.ndarray]
ForwardSpmm = Callable[[CsrMatrix, np.ndarray], np.ndarray]


def normalize_adjacency(a: CsrMatrix) -> CsrMatrix:
    """D^-1/2 (A + I) D^-1/2 for a binary, symmetric adjacency."""
    if a.n_rows != a.n_cols:
        raise ValueError("adjacency must be square")
    if a.nnz and not np.all(a.val == 1.0):
        raise ValueError("adjacency must be binary")
    rows = a.row_ids()
    if not csr_transpose(a).equals(a):
        raise ValueError("adjacency pattern must be symmetric")
    off = rows != a.col
    n = a.n_rows
    r = np.concatenate([rows[off], np.arange(n)])
    c = np.concatenate([a.col[off], np.arange(n)])
    deg = np.bincount(r, minlength=n).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return csr_from_arrays(r, c, inv_sqrt[r] * inv_sqrt[c], (n, n))


def exact_backward(ops: dict[int, CsrMatrix]) -> BackwardSpmm:
    return lambda slot, g: spmm(ops[slot], g)


class GCN:
    """Stack of ``H <- relu(A_hat @ H @ W)`` layers; no activation on the output."""

    def __init__(self, dims: list[int], rng: np.random.Generator):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.dims = list(dims)
        self.params = [xavier_init((dims[i], dims[i + 1]), rng) for i in range(len(dims) - 1)]
        self._cache: list[tuple[np.ndarray, np.ndarray]] | None = None
        self._adj_t: CsrMatrix | None = None
        self._adj_id: int | None = None

    @property
    def n_layers(self) -> int:
        return len(self.params)

    def prepare(self, adj: CsrMatrix) -> None:
        if self._adj_id != id(adj):
            self._adj_t = csr_transpose(adj)
            self._adj_id = id(adj)

    def backward_ops(self) -> dict[int, tuple[CsrMatrix, int]]:
        return {l: (self._adj_t, self.dims[l + 1]) for l in range(self.n_layers)}

    def forward(
        self, adj: CsrMatrix, x: np.ndarray, forward_spmm: ForwardSpmm | None = None
    ) -> np.ndarray:
        """``forward_spmm`` replaces the aggregation; only for bias diagnostics."""
        self.prepare(adj)
        agg = spmm if forward_spmm is None else forward_spmm
        cache = []
        h = x
        for l, w in enumerate(self.params):
            with flops.flop_tag(f"fwd_mm/{l}"):
                j = matmul(h, w)
            with flops.flop_tag(f"fwd_spmm/{l}"):
                pre = agg(adj, j)
            cache.append((h, pre))
            h = relu(pre) if l < self.n_layers - 1 else pre
        self._cache = cache
        return h

    def backward(self, grad_out: np.ndarray, bwd: BackwardSpmm | None = None) -> list[np.ndarray]:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        if bwd is None:
            bwd = exact_backward({l: op for l, (op, _) in self.backward_ops().items()})
        grads: list[np.ndarray] = [None] * self.n_layers  # type: ignore[list-item]
        g = grad_out
        for l in reversed(range(self.n_layers)):
            h_in, pre = self._cache[l]
            if l < self.n_layers - 1:
                g = relu_backward(pre, g)
            with flops.flop_tag(f"bwd_spmm/{l}"):
                g_j = bwd(l, g)
            with flops.flop_tag(f"bwd_mm/{l}"):
                grads[l] = matmul(h_in.T, g_j)
                if l > 0:
                    g = matmul(g_j, self.params[l].T)
        return grads


class GraphSAGE:
    """Mean-aggregator SAGE: ``H <- relu(H @ W1 + mean_agg(A, H) @ W2)``.

    Parameters are stored flat as ``[W1_0, W2_0, W1_1, W2_1, ...]``. Layer 0
    aggregates the constant features, so its sparse product has no backward
    counterpart; slots start at 1.
    """

    def __init__(self, dims: list[int], rng: np.random.Generator):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.dims = list(dims)
        self.params = []
        for i in range(len(dims) - 1):
            self.params.append(xavier_init((dims[i], dims[i + 1]), rng))
            self.params.append(xavier_init((dims[i], dims[i + 1]), rng))
        self._cache = None
        self._mean_t: CsrMatrix | None = None
        self._adj_id: int | None = None

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def prepare(self, adj: CsrMatrix) -> None:
        if self._adj_id != id(adj):
            self._mean_t = csr_transpose(row_normalize(adj))
            self._adj_id = id(adj)

    def backward_ops(self) -> dict[int, tuple[CsrMatrix, int]]:
        return {l: (self._mean_t, self.dims[l]) for l in range(1, self.n_layers)}

    def forward(
        self, adj: CsrMatrix, x: np.ndarray, forward_spmm: ForwardSpmm | None = None
    ) -> np.ndarray:
        self.prepare(adj)
        agg_fn = spmm_mean if forward_spmm is None else forward_spmm
        cache = []
        h = x
        for l in range(self.n_layers):
            w1, w2 = self.params[2 * l], self.params[2 * l + 1]
            with flops.flop_tag(f"fwd_spmm/{l}"):
                agg = agg_fn(adj, h)
            with flops.flop_tag(f"fwd_mm/{l}"):
                pre = matmul(h, w1) + matmul(agg, w2)
            cache.append((h, agg, pre))
            h = relu(pre) if l < self.n_layers - 1 else pre
        self._cache = cache
        return h

    def backward(self, grad_out: np.ndarray, bwd: BackwardSpmm | None = None) -> list[np.ndarray]:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        if bwd is None:
            bwd = exact_backward({l: op for l, (op, _) in self.backward_ops().items()})
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        g = grad_out
        for l in reversed(range(self.n_layers)):
            h_in, agg, pre = self._cache[l]
            w1, w2 = self.params[2 * l], self.params[2 * l + 1]
            if l < self.n_layers - 1:
                g = relu_backward(pre, g)
            with flops.flop_tag(f"bwd_mm/{l}"):
                grads[2 * l] = matmul(h_in.T, g)
                grads[2 * l + 1] = matmul(agg.T, g)
            if l == 0:
                break
            with flops.flop_tag(f"bwd_mm/{l}"):
                g_self = matmul(g, w1.T)
                g_agg = matmul(g, w2.T)
            with flops.flop_tag(f"bwd_spmm/{l}"):
                g = g_self + bwd(l, g_agg)
        return grads


def build_model(kind: str, dims: list[int], rng: np.random.Generator):
    if kind == "gcn":
        return GCN(dims, rng)
    if kind == "sage":
        return GraphSAGE(dims, rng)
    raise ValueError(f"unknown model {kind!r}")

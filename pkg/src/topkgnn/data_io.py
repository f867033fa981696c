"""Graph datasets: text loaders, the synthetic SBM fixture, metrics CSV output.

Randomness comes from Philox4x64-10 (numpy's ``Philox`` bit generator), a
counter-based 64-bit generator. Each purpose (graph, features, masks,
sampling, init) gets its own stream keyed by ``(seed, purpose)``, so e.g.
changing the feature noise never perturbs the graph.
"""

from __future__ import annotations

import csv
import math
import sys
from dataclasses import dataclass

import numpy as np

from .sparse_core import CsrMatrix, csr_from_arrays

PURPOSES = {"graph": 1, "features": 2, "masks": 3, "sampling": 4, "init": 5, "bench": 6}

METRICS_COLUMNS = [
    "epoch",
    "loss",
    "train_acc",
    "val_acc",
    "test_acc",
    "bwd_spmm_flops",
    "bwd_spmm_flops_exact_equiv",
    "alloc_ms",
    "elapsed_ms",
    "approx_active",
    "mean_auc_stability",
]
TIMING_COLUMNS = ("alloc_ms", "elapsed_ms")


class DataError(ValueError):
    pass


def make_rng(seed: int, purpose: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), PURPOSES[purpose]]))


@dataclass
class GraphDataset:
    adjacency: CsrMatrix
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        n = self.adjacency.n_rows
        if self.adjacency.n_cols != n:
            raise DataError("adjacency must be square")
        for name in ("features", "labels", "train_mask", "val_mask", "test_mask"):
            if len(getattr(self, name)) != n:
                raise DataError(f"{name} has {len(getattr(self, name))} rows, graph has {n} nodes")
        masks = np.stack([self.train_mask, self.val_mask, self.test_mask]).astype(int)
        if np.any(masks.sum(axis=0) > 1):
            raise DataError("train/val/test masks overlap")
        for name in ("train_mask", "val_mask", "test_mask"):
            if not getattr(self, name).any():
                raise DataError(f"{name} is empty")
        present = set(np.unique(self.labels[self.train_mask]).tolist())
        if present != set(range(self.n_classes)):
            raise DataError("every class must appear in the training mask")

    @property
    def n_nodes(self) -> int:
        return self.adjacency.n_rows

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1


def _symmetric_binary(src: np.ndarray, dst: np.ndarray, n: int) -> CsrMatrix:
    keep = src != dst
    src, dst = src[keep], dst[keep]
    rows = np.concatenate([src, dst])
    cols = np.concatenate([dst, src])
    # collapse duplicates to a single unit entry
    pairs = np.unique(np.stack([rows, cols], axis=1), axis=0) if len(rows) else np.zeros((0, 2), int)
    return csr_from_arrays(pairs[:, 0], pairs[:, 1], np.ones(len(pairs)), (n, n))


def load_edge_list(path) -> CsrMatrix:
    """Read ``src dst`` lines (0-indexed, '#' comments, optional ``# nodes N`` header)."""
    src, dst = [], []
    n_override = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "nodes":
                    n_override = int(parts[1])
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'src dst', got {line!r}")
            try:
                s, d = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer node id") from None
            if s < 0 or d < 0:
                raise DataError(f"{path}:{lineno}: negative node id")
            src.append(s)
            dst.append(d)
    n = 1 + max(max(src, default=-1), max(dst, default=-1))
    if n_override is not None:
        if n_override < n:
            raise DataError(f"header declares {n_override} nodes but ids reach {n - 1}")
        n = n_override
    return _symmetric_binary(np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), n)


def write_edge_list(adj: CsrMatrix, path) -> None:
    rows = adj.row_ids()
    upper = rows < adj.col
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# nodes {adj.n_rows}\n")
        for s, d in zip(rows[upper].tolist(), adj.col[upper].tolist()):
            fh.write(f"{s} {d}\n")


def load_features_csv(path, n_nodes: int | None = None) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec:
                continue
            try:
                rows.append([float(c) for c in rec])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric cell") from None
    if len({len(r) for r in rows}) > 1:
        raise DataError(f"{path}: ragged feature rows")
    x = np.array(rows, dtype=np.float64).reshape(len(rows), -1)
    if n_nodes is not None and len(x) != n_nodes:
        raise DataError(f"{path}: {len(x)} feature rows for {n_nodes} nodes")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{path}: non-finite feature value")
    return x


def load_labels(path, n_nodes: int | None = None) -> np.ndarray:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            s = raw.strip()
            if not s:
                continue
            try:
                out.append(int(s))
            except ValueError:
                raise DataError(f"{path}:{lineno}: label must be an integer") from None
    labels = np.array(out, dtype=np.int64)
    if n_nodes is not None and len(labels) != n_nodes:
        raise DataError(f"{path}: {len(labels)} labels for {n_nodes} nodes")
    if len(labels) and labels.min() < 0:
        raise DataError(f"{path}: negative label")
    return labels


def load_masks(path, n_nodes: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tags = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            s = raw.strip()
            if not s:
                continue
            if s not in ("train", "val", "test", "none"):
                raise DataError(f"{path}:{lineno}: unknown split {s!r}")
            tags.append(s)
    tags = np.array(tags)
    if n_nodes is not None and len(tags) != n_nodes:
        raise DataError(f"{path}: {len(tags)} mask entries for {n_nodes} nodes")
    return tags == "train", tags == "val", tags == "test"


def load_dataset(edges, features, labels, masks) -> GraphDataset:
    adj = load_edge_list(edges)
    n = adj.n_rows
    return GraphDataset(
        adj,
        load_features_csv(features, n),
        load_labels(labels, n),
        *load_masks(masks, n),
    )


def _stratified_masks(labels: np.ndarray, n_classes: int, rng: np.random.Generator):
    n = len(labels)
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for c in range(n_classes):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(0.6 * len(idx)))
        n_va = int(round(0.2 * len(idx)))
        train[idx[:n_tr]] = True
        val[idx[n_tr : n_tr + n_va]] = True
        test[idx[n_tr + n_va :]] = True
    return train, val, test


def generate_sbm(
    n_nodes: int = 2000,
    n_classes: int = 4,
    p_in: float = 0.01,
    p_out: float = 0.001,
    feat_dim: int = 16,
    noise: float = 1.0,
    seed: int = 0,
) -> GraphDataset:
    """Stochastic block model with balanced classes and one-hot class means.

    Node ``i`` belongs to class ``i % n_classes``; each unordered pair is an
    edge independently with ``p_in`` (same class) or ``p_out`` (otherwise).
    Features are the class one-hot (first ``n_classes`` dims) plus
    ``noise * N(0, 1)``. Masks are a 60/20/20 split stratified by class.
    """
    if not 0 <= p_out < p_in <= 1:
        raise ValueError("need 0 <= p_out < p_in <= 1")
    if n_classes < 2 or n_nodes < 5 * n_classes or feat_dim < n_classes:
        raise ValueError("degenerate SBM size")
    labels = np.arange(n_nodes, dtype=np.int64) % n_classes

    g = make_rng(seed, "graph")
    src_list, dst_list = [], []
    # row-by-row over the strict upper triangle keeps memory at O(n)
    for i in range(n_nodes - 1):
        u = g.random(n_nodes - i - 1)
        j = np.arange(i + 1, n_nodes)
        p = np.where(labels[j] == labels[i], p_in, p_out)
        hit = j[u < p]
        src_list.append(np.full(len(hit), i, dtype=np.int64))
        dst_list.append(hit)
    src = np.concatenate(src_list) if src_list else np.zeros(0, np.int64)
    dst = np.concatenate(dst_list) if dst_list else np.zeros(0, np.int64)
    adj = _symmetric_binary(src, dst, n_nodes)

    f = make_rng(seed, "features")
    x = np.zeros((n_nodes, feat_dim))
    x[np.arange(n_nodes), labels] = 1.0
    x += noise * f.standard_normal((n_nodes, feat_dim))

    train, val, test = _stratified_masks(labels, n_classes, make_rng(seed, "masks"))
    return GraphDataset(adj, x, labels, train, val, test)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def write_metrics_csv(history: list[dict], path) -> None:
    """One row per epoch; floats use repr so a parse-back is exact."""
    try:
        fh = open(path, "w", encoding="utf-8", newline="") if path != "-" else None
    except OSError as exc:
        raise DataError(f"cannot write metrics to {path}: {exc}") from exc
    out = fh if fh is not None else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for row in history:
            missing = [c for c in METRICS_COLUMNS if c not in row]
            if missing:
                raise DataError(f"history row lacks {missing}")
            w.writerow([_fmt(row[c]) for c in METRICS_COLUMNS])
    finally:
        if fh is not None:
            fh.close()


def read_metrics_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (float(v) if v != "" else math.nan) for k, v in r.items()})
    return out

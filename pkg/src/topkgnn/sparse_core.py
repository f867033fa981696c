"""CSR storage and the exact sparse-dense kernels.

Dense operands are plain 2-D float64 numpy arrays. Every CSR matrix is kept
in canonical form: per-row column indices strictly ascending, no duplicate
coordinates. Explicit zeros are legal stored entries.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from . import flops


class ShapeError(ValueError):
    pass


def _readonly(x: np.ndarray) -> np.ndarray:
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    n_rows: int
    n_cols: int
    rowptr: np.ndarray
    col: np.ndarray
    val: np.ndarray

    def __post_init__(self):
        rowptr = np.ascontiguousarray(self.rowptr, dtype=np.int64)
        col = np.ascontiguousarray(self.col, dtype=np.int64)
        val = np.ascontiguousarray(self.val, dtype=np.float64)
        object.__setattr__(self, "rowptr", _readonly(rowptr))
        object.__setattr__(self, "col", _readonly(col))
        object.__setattr__(self, "val", _readonly(val))
        self._validate()

    def _validate(self) -> None:
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("negative shape")
        rp, col = self.rowptr, self.col
        if rp.shape != (self.n_rows + 1,) or rp[0] != 0:
            raise ValueError("rowptr must have n_rows+1 entries starting at 0")
        if np.any(np.diff(rp) < 0):
            raise ValueError("rowptr must be non-decreasing")
        if rp[-1] != len(col) or len(col) != len(self.val):
            raise ValueError("rowptr[-1], len(col) and len(val) disagree")
        if len(col) == 0:
            return
        if col.min() < 0 or col.max() >= self.n_cols:
            raise ValueError("column index out of range")
        # strictly ascending inside each row; row starts may step down
        step_ok = np.diff(col) > 0
        row_start = np.zeros(len(col), dtype=bool)
        row_start[rp[1:-1][rp[1:-1] < len(col)]] = True
        if not np.all(step_ok | row_start[1:]):
            raise ValueError("column indices must be strictly increasing within a row")
        if not np.all(np.isfinite(self.val)):
            raise ValueError("non-finite stored value")

    def scipy(self) -> sp.csr_array:
        # shares buffers; built once since the matrix is immutable
        cached = self.__dict__.get("_scipy")
        if cached is None:
            cached = sp.csr_array((self.val, self.col, self.rowptr), shape=self.shape, copy=False)
            cached.has_sorted_indices = True
            object.__setattr__(self, "_scipy", cached)
        return cached

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.rowptr[-1])

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), np.diff(self.rowptr))

    def row_counts(self) -> np.ndarray:
        return np.diff(self.rowptr)

    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.row_ids().tolist(), self.col.tolist(), self.val.tolist()))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row_ids(), self.col] = self.val
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.n_rows, self.n_cols], dtype=np.int64).tobytes())
        for arr in (self.rowptr, self.col, self.val):
            h.update(arr.tobytes())
        return h.hexdigest()

    def equals(self, other: "CsrMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.rowptr, other.rowptr)
            and np.array_equal(self.col, other.col)
            and np.array_equal(self.val, other.val)
        )

    def with_values(self, val: np.ndarray) -> "CsrMatrix":
        return CsrMatrix(self.n_rows, self.n_cols, self.rowptr, self.col, val)

    @classmethod
    def from_dense(cls, dense: np.ndarray, keep_zeros: bool = False) -> "CsrMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        if keep_zeros:
            rows, cols = np.indices(dense.shape).reshape(2, -1)
        else:
            rows, cols = np.nonzero(dense)
        return csr_from_coo(zip(rows, cols, dense[rows, cols]), dense.shape)

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def empty(cls, n_rows: int, n_cols: int) -> "CsrMatrix":
        return cls(n_rows, n_cols, np.zeros(n_rows + 1), np.zeros(0), np.zeros(0))


def csr_from_coo(
    triples: Iterable[tuple[int, int, float]], shape: tuple[int, int]
) -> CsrMatrix:
    """Build a canonical CSR matrix from (row, col, value) triples.

    Duplicate coordinates are summed; zeros that are given explicitly stay
    stored.
    """
    n_rows, n_cols = shape
    data = list(triples)
    if data:
        rows = np.fromiter((t[0] for t in data), dtype=np.int64, count=len(data))
        cols = np.fromiter((t[1] for t in data), dtype=np.int64, count=len(data))
        vals = np.fromiter((t[2] for t in data), dtype=np.float64, count=len(data))
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    return csr_from_arrays(rows, cols, vals, shape)


def csr_from_arrays(rows, cols, vals, shape: tuple[int, int]) -> CsrMatrix:
    n_rows, n_cols = shape
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if len(rows) and (
        rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols
    ):
        raise ValueError(f"COO index out of range for shape {shape}")
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if len(rows):
        first = np.ones(len(rows), dtype=bool)
        first[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.flatnonzero(first)
        vals = np.add.reduceat(vals, starts)
        rows, cols = rows[starts], cols[starts]
    rowptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=rowptr[1:])
    return CsrMatrix(n_rows, n_cols, rowptr, cols, vals)


def csr_transpose(a: CsrMatrix) -> CsrMatrix:
    rows = a.row_ids()
    # stable sort on column keeps source rows ascending inside each new row
    order = np.argsort(a.col, kind="stable")
    rowptr = np.zeros(a.n_cols + 1, dtype=np.int64)
    np.cumsum(np.bincount(a.col, minlength=a.n_cols), out=rowptr[1:])
    return CsrMatrix(a.n_cols, a.n_rows, rowptr, rows[order], a.val[order])


def _check_dense(b: np.ndarray, n_rows: int) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] != n_rows:
        raise ShapeError(f"dense operand has shape {b.shape}, expected ({n_rows}, d)")
    return b


def spmm(a: CsrMatrix, b: np.ndarray) -> np.ndarray:
    """Exact ``a @ b``; within a row, terms are accumulated in ascending column order."""
    b = _check_dense(b, a.n_cols)
    flops.record(a.nnz * b.shape[1])
    if a.nnz == 0 or b.shape[1] == 0:
        return np.zeros((a.n_rows, b.shape[1]))
    # scipy's CSR kernel walks each row's stored entries in order
    return np.asarray(a.scipy() @ b)


def row_mean_scale(a: CsrMatrix) -> np.ndarray:
    """1/r_i per row, r_i the stored-entry count; 0 for empty rows."""
    counts = a.row_counts().astype(np.float64)
    scale = np.zeros_like(counts)
    np.divide(1.0, counts, out=scale, where=counts > 0)
    return scale


def spmm_mean(a: CsrMatrix, b: np.ndarray) -> np.ndarray:
    return row_mean_scale(a)[:, None] * spmm(a, b)


def row_normalize(a: CsrMatrix) -> CsrMatrix:
    """The explicit operator D^-1 A behind :func:`spmm_mean`."""
    return a.with_values(a.val * np.repeat(row_mean_scale(a), a.row_counts()))


def csr_column_norms(a: CsrMatrix) -> np.ndarray:
    sq = np.bincount(a.col, weights=a.val * a.val, minlength=a.n_cols)
    return np.sqrt(sq)


def csr_column_nnz(a: CsrMatrix) -> np.ndarray:
    return np.bincount(a.col, minlength=a.n_cols).astype(np.int64)


def csr_frobenius(a: CsrMatrix) -> float:
    return float(np.sqrt(np.dot(a.val, a.val)))


def csr_select_columns(a: CsrMatrix, keep) -> tuple[CsrMatrix, np.ndarray]:
    """Keep only the listed columns, renumbering column ``keep[r]`` to ``r``.

    Returns the sliced matrix and the column map (new index -> original
    column), which is also the row selection for the paired dense operand.
    """
    keep = np.asarray(keep, dtype=np.int64).reshape(-1)
    if len(keep):
        if keep.min() < 0 or keep.max() >= a.n_cols:
            raise ValueError("column selection out of range")
        if np.any(np.diff(keep) <= 0):
            raise ValueError("column selection must be unique and ascending")
    remap = np.full(a.n_cols, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    new_col = remap[a.col]
    mask = new_col >= 0
    counts = np.bincount(a.row_ids()[mask], minlength=a.n_rows)
    rowptr = np.zeros(a.n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=rowptr[1:])
    sliced = CsrMatrix(a.n_rows, len(keep), rowptr, new_col[mask], a.val[mask])
    return sliced, keep.copy()


def select_rows(b: np.ndarray, rows) -> np.ndarray:
    return np.asarray(b)[np.asarray(rows, dtype=np.int64)]

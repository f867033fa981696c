import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topkgnn import flops
from topkgnn.sparse_core import (
    CsrMatrix,
    ShapeError,
    csr_column_nnz,
    csr_column_norms,
    csr_from_coo,
    csr_select_columns,
    csr_transpose,
    row_normalize,
    select_rows,
    spmm,
    spmm_mean,
)

from conftest import csr_matrices, random_csr

B = np.array([[7.0, 8.0], [9.0, 10.0]])


def test_from_coo_hand_built():
    a = csr_from_coo([(0, 0, 1), (1, 1, 4), (2, 0, 5), (2, 1, 6)], (3, 2))
    assert a.rowptr.tolist() == [0, 1, 2, 4]
    assert a.col.tolist() == [0, 1, 0, 1]
    assert a.val.tolist() == [1, 4, 5, 6]


def test_from_coo_empty_and_duplicates():
    e = csr_from_coo([], (2, 2))
    assert e.rowptr.tolist() == [0, 0, 0] and e.nnz == 0
    d = csr_from_coo([(0, 0, 1), (0, 0, 2)], (1, 1))
    assert d.val.tolist() == [3]


def test_from_coo_keeps_explicit_zero():
    a = csr_from_coo([(0, 1, 0.0)], (1, 2))
    assert a.nnz == 1


@pytest.mark.parametrize("bad", [(3, 0, 1.0), (0, 2, 1.0), (-1, 0, 1.0)])
def test_from_coo_out_of_range(bad):
    with pytest.raises(ValueError):
        csr_from_coo([bad], (3, 2))


def test_constructor_rejects_unsorted_columns():
    with pytest.raises(ValueError):
        CsrMatrix(1, 3, [0, 2], [2, 1], [1.0, 1.0])
    with pytest.raises(ValueError):
        CsrMatrix(1, 3, [0, 2], [1, 1], [1.0, 1.0])


def test_transpose_hand(small_matrix):
    t = csr_transpose(small_matrix)
    assert t.shape == (2, 3)
    assert t.rowptr.tolist() == [0, 2, 4]
    assert t.col.tolist() == [0, 2, 1, 2]
    assert t.val.tolist() == [1, 5, 4, 6]


def test_transpose_trivial():
    i3 = CsrMatrix.identity(3)
    assert csr_transpose(i3).equals(i3)
    assert csr_transpose(CsrMatrix.empty(2, 3)).shape == (3, 2)


@given(csr_matrices())
def test_transpose_involution(a):
    assert csr_transpose(csr_transpose(a)).equals(a)


@given(csr_matrices())
def test_coo_round_trip(a):
    b = csr_from_coo(a.entries(), a.shape)
    assert b.equals(a)


def test_spmm_hand(small_matrix):
    np.testing.assert_array_equal(spmm(small_matrix, B), [[7, 8], [36, 40], [89, 100]])


def test_spmm_identity_and_empty_rows():
    b = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(spmm(CsrMatrix.identity(3), b), b)
    np.testing.assert_array_equal(spmm(CsrMatrix.empty(4, 3), b), np.zeros((4, 2)))


def test_spmm_shape_mismatch(small_matrix):
    with pytest.raises(ShapeError):
        spmm(small_matrix, np.ones((3, 2)))


def test_spmm_counts_flops(small_matrix):
    with flops.count_flops() as fc, flops.flop_tag("x"):
        spmm(small_matrix, B)
    assert fc.counts["x"] == small_matrix.nnz * 2


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(1, 64), st.integers(1, 64), st.integers(1, 16))
def test_spmm_matches_dense(seed, n, m, d):
    rng = np.random.default_rng(seed)
    a = random_csr(rng, n, m, rng.uniform(0.05, 0.5))
    b = rng.standard_normal((m, d))
    ref = a.to_dense() @ b
    err = np.linalg.norm(spmm(a, b) - ref)
    assert err <= 1e-12 * max(np.linalg.norm(ref), 1e-300) or err == 0.0


def test_spmm_mean_worked_example(worked_matrix):
    np.testing.assert_allclose(
        spmm_mean(worked_matrix, B), [[3.5, 4.0], [18.0, 20.0], [44.5, 50.0]], rtol=0, atol=0
    )


def test_spmm_mean_single_entry_and_empty():
    a = csr_from_coo([(0, 1, 2.5)], (2, 2))
    out = spmm_mean(a, B)
    np.testing.assert_array_equal(out[0], 2.5 * B[1])
    np.testing.assert_array_equal(out[1], [0, 0])


@given(csr_matrices())
def test_spmm_mean_is_scaled_spmm(a):
    b = np.random.default_rng(0).standard_normal((a.n_cols, 3))
    r = a.row_counts()
    inv = np.where(r > 0, 1.0 / np.maximum(r, 1), 0.0)
    np.testing.assert_array_equal(spmm_mean(a, b), inv[:, None] * spmm(a, b))


def test_row_normalize_matches_mean(worked_matrix):
    np.testing.assert_allclose(spmm(row_normalize(worked_matrix), B), spmm_mean(worked_matrix, B))


def test_column_norms(small_matrix):
    np.testing.assert_allclose(csr_column_norms(small_matrix), [np.sqrt(26), np.sqrt(52)])
    np.testing.assert_array_equal(csr_column_norms(CsrMatrix.identity(4)), np.ones(4))
    assert csr_column_norms(csr_from_coo([(0, 0, 2.0)], (1, 2)))[1] == 0.0


def test_column_nnz(small_matrix):
    assert csr_column_nnz(small_matrix).tolist() == [2, 2]
    assert csr_column_nnz(CsrMatrix.identity(3)).tolist() == [1, 1, 1]
    assert csr_column_nnz(CsrMatrix.empty(2, 3)).tolist() == [0, 0, 0]


@given(csr_matrices())
def test_column_nnz_sums_to_nnz(a):
    assert csr_column_nnz(a).sum() == a.nnz


def test_select_columns_hand(small_matrix):
    s, cmap = csr_select_columns(small_matrix, [0])
    assert s.shape == (3, 1)
    assert s.rowptr.tolist() == [0, 1, 1, 2]
    assert s.col.tolist() == [0, 0]
    assert s.val.tolist() == [1, 5]
    assert cmap.tolist() == [0]


def test_select_columns_all_and_none(small_matrix):
    s, _ = csr_select_columns(small_matrix, [0, 1])
    assert s.equals(small_matrix)
    e, _ = csr_select_columns(small_matrix, [])
    assert e.shape == (3, 0) and e.nnz == 0


@pytest.mark.parametrize("keep", [[1, 0], [0, 0], [2], [-1]])
def test_select_columns_invalid(small_matrix, keep):
    with pytest.raises(ValueError):
        csr_select_columns(small_matrix, keep)


@given(csr_matrices(), st.integers(0, 2**32 - 1))
def test_select_columns_is_truncated_sum(a, seed):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((a.n_cols, 3))
    keep = np.flatnonzero(rng.random(a.n_cols) < 0.5)
    s, cmap = csr_select_columns(a, keep)
    dense = a.to_dense()
    ref = sum((np.outer(dense[:, i], b[i]) for i in keep), np.zeros((a.n_rows, 3)))
    np.testing.assert_allclose(spmm(s, select_rows(b, cmap)), ref, rtol=1e-12, atol=1e-12)


def test_checksum_stable(small_matrix):
    again = csr_from_coo(small_matrix.entries(), small_matrix.shape)
    assert again.checksum() == small_matrix.checksum()

"""Dense tensor utilities: outer products, reshaping, contractions, file IO."""

import numpy as np
import pytest

from spectral_rnn.tensor_core import (inverse_reshape, matricize_mode1,
                                      multilinear, outer, pinv, reshape,
                                      rowwise_kron, rowwise_kron_power)
from spectral_rnn.spt1 import read_tensor, write_tensor


def test_outer_two_vectors():
    assert np.array_equal(outer([np.array([1.0, 0.0]), np.array([0.0, 1.0])]),
                          np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_outer_three_scalars():
    T = outer([np.array([2.0]), np.array([3.0]), np.array([4.0])])
    assert T.shape == (1, 1, 1)
    assert T[0, 0, 0] == 24.0


def test_outer_matches_einsum():
    rng = np.random.default_rng(0)
    u, v, w = rng.standard_normal((3, 4))
    assert np.allclose(outer([u, v, w]), np.einsum("i,j,k->ijk", u, v, w))


def test_outer_rejects_bad_input():
    with pytest.raises(ValueError):
        outer([])
    with pytest.raises(ValueError):
        outer([np.eye(2)])
    with pytest.raises(ValueError):
        outer([np.array([1.0, np.inf])])


def test_matricize_mode1_entry_rule():
    d = 3
    T = np.arange(d ** 3, dtype=float).reshape(d, d, d)
    M = matricize_mode1(T)
    assert M.shape == (d, d * d)
    # 1-based rule: T(i, j, l) = M(i, l + (j - 1) d)
    for i in range(1, d + 1):
        for j in range(1, d + 1):
            for l in range(1, d + 1):
                assert M[i - 1, (l + (j - 1) * d) - 1] == T[i - 1, j - 1, l - 1]


def test_matricize_mode1_rejects_wrong_order():
    with pytest.raises(ValueError):
        matricize_mode1(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        matricize_mode1(np.zeros((2, 2, 3)))


def test_reshape_grouping_entry():
    T = np.arange(16, dtype=float).reshape(2, 2, 2, 2)
    M = reshape(T, [[1, 2], [3, 4]])
    assert M.shape == (4, 4)
    # 1-based: entry (1, 2, 2, 1) lands at (2, 3)
    assert M[2 - 1, 3 - 1] == T[0, 1, 1, 0]


def test_reshape_matches_matricize():
    rng = np.random.default_rng(1)
    T = rng.standard_normal((3, 3, 3))
    assert np.array_equal(reshape(T, [[1], [2, 3]]), matricize_mode1(T))


def test_reshape_round_trip():
    rng = np.random.default_rng(2)
    T = rng.standard_normal((2, 3, 4, 5))
    groups = [[3, 1], [4, 2]]
    M = reshape(T, groups)
    back = inverse_reshape(M, T.shape, groups)
    assert np.array_equal(back, T)


def test_reshape_rejects_bad_grouping():
    T = np.zeros((2, 2, 2))
    with pytest.raises(ValueError):
        reshape(T, [[1], [2]])          # mode 3 missing
    with pytest.raises(ValueError):
        reshape(T, [[1, 1], [2, 3]])    # duplicate
    with pytest.raises(ValueError):
        reshape(T, [[1], [2, 3, 4]])    # out of range


def test_multilinear_full_contraction():
    rng = np.random.default_rng(3)
    T = rng.standard_normal((3, 4, 5))
    A = rng.standard_normal((3, 2))
    B = rng.standard_normal((4, 2))
    C = rng.standard_normal((5, 2))
    got = multilinear(T, A, B, C)
    want = np.einsum("ijk,ia,jb,kc->abc", T, A, B, C)
    assert np.allclose(got, want)


def test_multilinear_partial_and_vector():
    rng = np.random.default_rng(4)
    T = rng.standard_normal((3, 3, 3))
    v = rng.standard_normal(3)
    got = multilinear(T, None, v, v)
    want = np.einsum("ijk,j,k->i", T, v, v)
    assert np.allclose(got[:, 0, 0], want)


def test_multilinear_shape_errors():
    T = np.zeros((2, 2))
    with pytest.raises(ValueError):
        multilinear(T, np.eye(2))
    with pytest.raises(ValueError):
        multilinear(T, np.eye(3), np.eye(2))


def test_rowwise_kron_single_row():
    got = rowwise_kron(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]))
    assert np.array_equal(got, np.array([[3.0, 4.0, 6.0, 8.0]]))


def test_rowwise_kron_two_rows():
    A = np.array([[1.0, 2.0], [0.0, 1.0]])
    B = np.array([[3.0, 0.0], [1.0, 1.0]])
    want = np.array([[3.0, 0.0, 6.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    assert np.array_equal(rowwise_kron(A, B), want)


def test_rowwise_kron_power():
    A = np.array([[1.0, 2.0]])
    got = rowwise_kron_power(A, 3)
    want = np.kron(np.kron(A[0], A[0]), A[0])[None, :]
    assert np.array_equal(got, want)
    with pytest.raises(ValueError):
        rowwise_kron_power(A, 0)


def test_pinv_truncates_small_singular_values():
    got = pinv(np.diag([2.0, 0.0]))
    assert np.allclose(got, np.diag([0.5, 0.0]))
    # a value below the relative tolerance is treated as zero
    got = pinv(np.diag([1.0, 1e-14]))
    assert np.allclose(got, np.diag([1.0, 0.0]))


def test_pinv_matches_numpy_on_full_rank():
    rng = np.random.default_rng(5)
    M = rng.standard_normal((4, 6))
    assert np.allclose(pinv(M), np.linalg.pinv(M))


def test_spt1_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    for shape in [(4,), (2, 3), (2, 3, 4, 2)]:
        T = rng.standard_normal(shape)
        p = tmp_path / "t.spt1"
        write_tensor(p, T)
        back = read_tensor(p)
        assert back.shape == tuple(shape)
        assert np.array_equal(back, np.asarray(T))


def test_spt1_header_layout(tmp_path):
    p = tmp_path / "t.spt1"
    write_tensor(p, np.array([[1.0, 2.0], [3.0, 4.0]]))
    raw = p.read_bytes()
    assert raw[:4] == b"SPT1"
    assert int.from_bytes(raw[4:8], "little") == 2
    assert int.from_bytes(raw[8:16], "little") == 2
    assert int.from_bytes(raw[16:24], "little") == 2
    assert np.frombuffer(raw[24:], dtype="<f8").tolist() == [1.0, 2.0, 3.0, 4.0]


def test_spt1_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.spt1"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        read_tensor(p)

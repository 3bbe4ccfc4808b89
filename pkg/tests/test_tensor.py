import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infsa import DegenerateOperatorError, ShapeError, SingularMatrixError
from infsa.tensor import frobenius_norm, lu_factor, matmul, power_iteration, solve_linear


def naive_matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


def test_matmul_identity_and_annihilator():
    a = np.array([[1.0, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(a, np.eye(2)), a)
    np.testing.assert_array_equal(matmul(np.zeros((2, 2)), np.array([[5.0, 6], [7, 8]])), np.zeros((2, 2)))


def test_matmul_square():
    a = np.array([[1.0, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(a, a), [[7, 10], [15, 22]])
    np.testing.assert_array_equal(naive_matmul(a, a), [[7, 10], [15, 22]])


def test_matmul_matches_naive(rng):
    a, b = rng.standard_normal((5, 3)), rng.standard_normal((3, 4))
    np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-13, atol=1e-14)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_solve_examples():
    np.testing.assert_array_equal(solve_linear(np.eye(2), np.array([[3.0], [4.0]])), [[3], [4]])
    np.testing.assert_array_equal(solve_linear(np.diag([2.0, 4.0]), np.eye(2)), [[0.5, 0], [0, 0.25]])
    with pytest.raises(SingularMatrixError):
        solve_linear(np.ones((2, 2)), np.eye(2))


def test_solve_vector_rhs():
    x = solve_linear(np.array([[4.0, 1], [2, 3]]), np.array([1.0, 2.0]))
    assert x.shape == (2,)
    np.testing.assert_allclose(np.array([[4.0, 1], [2, 3]]) @ x, [1, 2], rtol=1e-14)


def test_solve_needs_pivoting():
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_array_equal(solve_linear(a, np.eye(2)), a)


def test_lu_reconstructs(rng):
    a = rng.standard_normal((7, 7))
    lu, piv = lu_factor(a)
    lower = np.tril(lu, -1) + np.eye(7)
    upper = np.triu(lu)
    np.testing.assert_allclose(lower @ upper, a[piv], atol=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_solve_roundtrip(n, m, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) + n * np.eye(n)
    b = rng.standard_normal((n, m))
    x = solve_linear(a, b)
    assert np.linalg.norm(a @ x - b) <= 1e-9 * np.linalg.norm(b)


def test_frobenius():
    assert frobenius_norm(np.array([[3.0, 4], [0, 0]])) == 5.0
    assert frobenius_norm(np.zeros((3, 3))) == 0.0
    assert frobenius_norm(np.eye(2)) == pytest.approx(np.sqrt(2), abs=1e-15)


def test_power_iteration_diagonal():
    v, lam, _ = power_iteration(np.diag([2.0, 1.0]), np.array([1.0, 1.0]))
    np.testing.assert_allclose(v, [1, 0], atol=1e-12)
    assert lam == pytest.approx(2.0, abs=1e-11)


def test_power_iteration_rank_one():
    u = np.array([1.0, 1.0])
    v, lam, iters = power_iteration(np.outer(u, u), max_iters=1)
    np.testing.assert_array_equal(v, [0.5, 0.5])
    assert iters == 1


def test_power_iteration_matches_eigensolver(rng):
    for _ in range(10):
        a = rng.random((8, 8))
        v, lam, _ = power_iteration(a)
        w, vecs = np.linalg.eig(a)
        k = np.argmax(np.abs(w))
        ref = np.abs(np.real(vecs[:, k]))
        cos = v @ ref / (np.linalg.norm(v) * np.linalg.norm(ref))
        assert cos >= 1 - 1e-9
        assert abs(np.sum(v) - 1) <= 1e-12 and np.all(v >= 0)
        rho = np.max(np.abs(w))
        assert abs(lam - rho) <= 1e-10 * rho


def test_power_iteration_degenerate():
    with pytest.raises(DegenerateOperatorError):
        power_iteration(np.zeros((3, 3)))


def test_power_iteration_rejects_nonpositive_start():
    with pytest.raises(ValueError):
        power_iteration(np.eye(2), np.array([1.0, 0.0]))

"""Dense linear-algebra substrate.

Matrices and vectors are plain ``numpy.ndarray`` of float64. The LU kernel
behind :func:`solve_linear` lives in the compiled core (see ``_backend``).
"""

import math

import numpy as np

from infsa._backend import kernels
from infsa.errors import DegenerateOperatorError, ShapeError

#: Pivots smaller than this (after row pivoting) are treated as exact zeros.
PIVOT_TOL = 1e-12
#: Iteration budget for power iteration (200 steps, as in the alignment protocol).
POWER_MAX_ITERS = 200
POWER_TOL = 1e-12


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def as_vector(v, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    return v


def as_square(a, name="matrix"):
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")
    return a


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(a):
    a = np.asarray(a, dtype=np.float64)
    return math.sqrt(float(np.sum(a * a)))


def lu_factor(a):
    """LU factorization with partial row pivoting.

    Returns ``(lu, piv)`` where ``lu`` packs the unit-lower and upper factors
    and ``a[piv] == L @ U``. Raises :class:`SingularMatrixError` when a pivot
    falls below :data:`PIVOT_TOL`.
    """
    a = as_square(a, "a")
    return kernels.lu_factor(a, PIVOT_TOL)


def solve_linear(a, b):
    """Solve ``a @ x = b`` for ``x``; ``b`` may be a vector or a matrix."""
    a = as_square(a, "a")
    b = np.asarray(b, dtype=np.float64)
    vector_rhs = b.ndim == 1
    if vector_rhs:
        b = b[:, None]
    b = as_matrix(b, "b")
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"right-hand side has {b.shape[0]} rows, expected {a.shape[0]}")
    lu, piv = kernels.lu_factor(a, PIVOT_TOL)
    x = kernels.lu_solve(lu, piv, b)
    return x[:, 0] if vector_rhs else x


def power_iteration(a, x0=None, max_iters=POWER_MAX_ITERS, tol=POWER_TOL):
    """Dominant eigenpair of a nonnegative matrix by l1-normalised power iteration.

    Iterates ``v <- A v / ||A v||_1`` from ``x0`` (default: uniform) and stops once
    successive iterates differ by less than ``tol`` in l1 or after ``max_iters``
    steps. Returns ``(v, lam, iters_used)`` with ``lam = ||A v||_1`` for the
    returned ``v``.

    Raises :class:`DegenerateOperatorError` if ``A v`` vanishes; callers that can
    interpret that (e.g. as a zero spectral radius) catch it.
    """
    a = as_square(a, "a")
    n = a.shape[0]
    if x0 is None:
        v = np.full(n, 1.0 / n)
    else:
        v = as_vector(x0, "x0")
        if v.shape[0] != n:
            raise ShapeError(f"x0 has length {v.shape[0]}, expected {n}")
        if not np.all(v > 0):
            raise ValueError("x0 must be strictly positive")
        v = v / np.sum(np.abs(v))
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    iters = 0
    for iters in range(1, max_iters + 1):
        w = a @ v
        s = float(np.sum(np.abs(w)))
        if s == 0.0:
            raise DegenerateOperatorError(f"A v = 0 at iteration {iters}")
        w /= s
        delta = float(np.sum(np.abs(w - v)))
        v = w
        if delta < tol:
            break
    lam = float(np.sum(np.abs(a @ v)))
    return v, lam, iters

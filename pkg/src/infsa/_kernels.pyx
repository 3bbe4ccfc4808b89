# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: LU with partial pivoting, walk enumeration, absorbing walks.

Every function here has a twin in ``_pykernels`` with identical semantics and
identical floating-point operation order; ``infsa._backend`` picks one at import.
"""

import numpy as np

from libc.math cimport fabs
from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport free, malloc

from infsa.errors import SingularMatrixError, WalkCapError

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _walk_key(uint64_t seed, uint64_t walk) noexcept nogil:
    return _mix(seed + (walk + 1) * GOLDEN)


cdef inline double _uniform(uint64_t key, uint64_t step) noexcept nogil:
    return <double>(_mix(key + (step + 1) * GOLDEN) >> 11) * (1.0 / 9007199254740992.0)


def counter_uniform(seed, walk, step):
    """Uniform in [0, 1) keyed by (seed, walk, step)."""
    cdef uint64_t s = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return _uniform(_walk_key(s, <uint64_t>walk), <uint64_t>step)


def lu_factor(a, double pivot_tol):
    cdef double[:, ::1] lu = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = lu.shape[0]
    piv_arr = np.arange(n, dtype=np.int64)
    cdef int64_t[::1] piv = piv_arr
    cdef Py_ssize_t i, j, k, p
    cdef double best, v, f, tmp
    cdef int64_t ti
    cdef bint singular = False
    with nogil:
        for k in range(n):
            p = k
            best = fabs(lu[k, k])
            for i in range(k + 1, n):
                v = fabs(lu[i, k])
                if v > best:
                    best = v
                    p = i
            if best < pivot_tol:
                singular = True
                break
            if p != k:
                for j in range(n):
                    tmp = lu[k, j]
                    lu[k, j] = lu[p, j]
                    lu[p, j] = tmp
                ti = piv[k]
                piv[k] = piv[p]
                piv[p] = ti
            for i in range(k + 1, n):
                f = lu[i, k] / lu[k, k]
                lu[i, k] = f
                for j in range(k + 1, n):
                    lu[i, j] = lu[i, j] - f * lu[k, j]
    if singular:
        raise SingularMatrixError(f"pivot magnitude {best!r} < {pivot_tol} at column {k}")
    return np.asarray(lu), piv_arr


def lu_solve(lu_in, piv_in, b_in):
    cdef double[:, ::1] lu = np.ascontiguousarray(lu_in, dtype=np.float64)
    cdef int64_t[::1] piv = np.ascontiguousarray(piv_in, dtype=np.int64)
    b = np.ascontiguousarray(b_in, dtype=np.float64)
    x_arr = np.ascontiguousarray(b[piv_in])
    cdef double[:, ::1] x = x_arr
    cdef Py_ssize_t n = lu.shape[0], m = x.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double acc
    with nogil:
        for c in range(m):
            for i in range(n):
                acc = x[i, c]
                for j in range(i):
                    acc = acc - lu[i, j] * x[j, c]
                x[i, c] = acc
            for i in range(n - 1, -1, -1):
                acc = x[i, c]
                for j in range(i + 1, n):
                    acc = acc - lu[i, j] * x[j, c]
                x[i, c] = acc / lu[i, i]
    return x_arr


def path_sum(a_in, Py_ssize_t i, Py_ssize_t j, Py_ssize_t t):
    cdef double[:, ::1] a = np.ascontiguousarray(a_in, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = t - 1
    cdef Py_ssize_t k, prev
    cdef double total = 0.0, w
    if m == 0:
        return a[i, j]
    cdef Py_ssize_t *idx = <Py_ssize_t *>malloc(m * sizeof(Py_ssize_t))
    if idx == NULL:
        raise MemoryError()
    try:
        for k in range(m):
            idx[k] = 0
        while True:
            # lexicographic order over intermediate sequences
            w = a[i, idx[0]]
            for k in range(1, m):
                w = w * a[idx[k - 1], idx[k]]
            w = w * a[idx[m - 1], j]
            total = total + w
            k = m - 1
            while k >= 0:
                idx[k] += 1
                if idx[k] < n:
                    break
                idx[k] = 0
                k -= 1
            if k < 0:
                break
    finally:
        free(idx)
    return total


def walk_counts(cdf_in, seed, Py_ssize_t start, int64_t w0, int64_t w1, int64_t max_steps):
    """Per-token sums and sums of squares of visit counts over walks [w0, w1)."""
    cdef double[:, ::1] cdf = np.ascontiguousarray(cdf_in, dtype=np.float64)
    cdef Py_ssize_t n = cdf.shape[0]
    sums_arr = np.zeros(n, dtype=np.int64)
    sumsq_arr = np.zeros(n, dtype=np.int64)
    cnt_arr = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] sums = sums_arr
    cdef int64_t[::1] sumsq = sumsq_arr
    cdef int64_t[::1] cnt = cnt_arr
    cdef uint64_t s = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t key
    cdef int64_t w, step
    cdef Py_ssize_t state, k
    cdef double u
    cdef bint capped = False
    with nogil:
        for w in range(w0, w1):
            key = _walk_key(s, <uint64_t>w)
            state = start
            step = 0
            while True:
                cnt[state] += 1
                if step >= max_steps:
                    capped = True
                    break
                u = _uniform(key, <uint64_t>step)
                step += 1
                k = 0
                while k < n and not (u < cdf[state, k]):
                    k += 1
                if k == n:
                    break
                state = k
            if capped:
                break
            for k in range(n):
                sums[k] += cnt[k]
                sumsq[k] += cnt[k] * cnt[k]
                cnt[k] = 0
    if capped:
        raise WalkCapError(f"walk {w} exceeded {max_steps} steps without absorption")
    return sums_arr, sumsq_arr

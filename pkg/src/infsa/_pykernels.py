"""Pure-Python/numpy twins of the compiled kernels in ``_kernels.pyx``.

Operation order per output element matches the compiled code, so both
backends agree bit-for-bit on IEEE doubles.
"""

import itertools

import numpy as np

from infsa.errors import SingularMatrixError, WalkCapError

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_WALK_CHUNK_CELLS = 1 << 22


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _walk_keys(seed, walks):
    walks = np.asarray(walks, dtype=np.uint64)
    return _mix(np.uint64(int(seed) & _MASK) + (walks + np.uint64(1)) * _GOLDEN)


def _uniforms(keys, steps):
    bits = _mix(keys + (np.asarray(steps, dtype=np.uint64) + np.uint64(1)) * _GOLDEN)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def counter_uniform(seed, walk, step):
    """Uniform in [0, 1) keyed by (seed, walk, step)."""
    keys = _walk_keys(seed, np.array([walk]))
    return float(_uniforms(keys, np.array([step]))[0])


def lu_factor(a, pivot_tol):
    lu = np.array(a, dtype=np.float64, order="C", copy=True)
    n = lu.shape[0]
    piv = np.arange(n, dtype=np.int64)
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        best = abs(lu[p, k])
        if best < pivot_tol:
            raise SingularMatrixError(f"pivot magnitude {best!r} < {pivot_tol} at column {k}")
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            piv[[k, p]] = piv[[p, k]]
        f = lu[k + 1 :, k] / lu[k, k]
        lu[k + 1 :, k] = f
        lu[k + 1 :, k + 1 :] -= np.multiply.outer(f, lu[k, k + 1 :])
    return lu, piv


def lu_solve(lu, piv, b):
    x = np.array(np.asarray(b, dtype=np.float64)[piv], order="C")
    n = lu.shape[0]
    # vectorised over right-hand sides, sequential along each row
    for i in range(n):
        acc = x[i].copy()
        for j in range(i):
            acc = acc - lu[i, j] * x[j]
        x[i] = acc
    for i in range(n - 1, -1, -1):
        acc = x[i].copy()
        for j in range(i + 1, n):
            acc = acc - lu[i, j] * x[j]
        x[i] = acc / lu[i, i]
    return x


def path_sum(a, i, j, t):
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if t == 1:
        return float(a[i, j])
    rows = a.tolist()
    total = 0.0
    for seq in itertools.product(range(n), repeat=t - 1):
        w = rows[i][seq[0]]
        for k in range(1, t - 1):
            w = w * rows[seq[k - 1]][seq[k]]
        w = w * rows[seq[-1]][j]
        total = total + w
    return total


def walk_counts(cdf, seed, start, w0, w1, max_steps):
    """Per-token sums and sums of squares of visit counts over walks [w0, w1)."""
    cdf = np.ascontiguousarray(cdf, dtype=np.float64)
    n = cdf.shape[0]
    sums = np.zeros(n, dtype=np.int64)
    sumsq = np.zeros(n, dtype=np.int64)
    chunk = max(1, _WALK_CHUNK_CELLS // max(n, 1))
    for c0 in range(w0, w1, chunk):
        c1 = min(w1, c0 + chunk)
        walks = np.arange(c0, c1, dtype=np.int64)
        keys = _walk_keys(seed, walks)
        width = c1 - c0
        counts = np.zeros((width, n), dtype=np.int64)
        alive = np.arange(width)
        state = np.full(width, start, dtype=np.int64)
        step = 0
        while alive.size:
            counts[alive, state] += 1
            if step >= max_steps:
                raise WalkCapError(
                    f"walk {int(walks[alive[0]])} exceeded {max_steps} steps without absorption"
                )
            u = _uniforms(keys[alive], np.full(alive.size, step, dtype=np.uint64))
            step += 1
            below = u[:, None] < cdf[state]
            moved = below.any(axis=1)
            alive = alive[moved]
            state = np.argmax(below[moved], axis=1)
        sums += counts.sum(axis=0)
        sumsq += (counts * counts).sum(axis=0)
    return sums, sumsq

"""Latency scaling study: Linear InfSA (O(N)) vs Pure InfSA and softmax (O(N^2 d)).

Each variant is timed on random inputs at increasing token counts; the
median of ``repeats`` timed runs (after two discarded warm-ups) is recorded,
and ``log(time)`` is regressed on ``log(N)`` over the upper half of sizes.
"""

import csv
import io
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from infsa.errors import UsageError
from infsa.graph import DEFAULT_EPS
from infsa.layers import linfsa_attention_batched, pure_attention_streaming
from infsa.paths import DEFAULT_GAMMA

VARIANTS = ("pure", "linear", "softmax-baseline")
DEFAULT_SIZES = (1024, 2048, 4096, 8192, 16384)
MIN_SIZES = 4
MIN_REPEATS = 5
WARMUPS = 2
CSV_HEADER = ("variant", "n_tokens", "median_s", "repeats")

# head layouts: the linear variant runs a full 64 x 12 multi-head layer, the
# quadratic variants a single 64-wide head (their cost is dominated by N^2 anyway)
HEAD_SHAPES = {"linear": (64, 12), "pure": (1, 64), "softmax-baseline": (1, 64)}


@dataclass(frozen=True)
class BenchRecord:
    variant: str
    n_tokens: int
    wall_time: float
    repeats: int
    oom: bool = False


def softmax_attention_streaming(q, k, v, block_rows=256):
    """Row-blocked softmax(Q K^T / sqrt(d)) V, the quadratic reference."""
    n, d = q.shape
    z = np.empty((n, v.shape[1]))
    scale = 1.0 / np.sqrt(d)
    for r0 in range(0, n, block_rows):
        s = (q[r0:r0 + block_rows] @ k.T) * scale
        s -= s.max(axis=1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=1, keepdims=True)
        z[r0:r0 + block_rows] = s @ v
    return z


def _inputs(variant, n, rng):
    heads, d = HEAD_SHAPES[variant]
    shape = (heads, n, d) if variant == "linear" else (n, d)
    q = rng.standard_normal(shape)
    v = rng.standard_normal(shape)
    if variant == "linear":
        return (q, v)
    return (q, rng.standard_normal(shape), v)


def _runner(variant, epsilon, gamma):
    if variant == "linear":
        def run(q, v):
            h, a = linfsa_attention_batched(q, v, gamma, epsilon)
            return a
        return run
    if variant == "pure":
        def run(q, k, v):
            return pure_attention_streaming(q, k, v, epsilon)[1]
        return run
    return softmax_attention_streaming


def _validate(variant, out):
    """The benchmark never times an unchecked kernel."""
    if variant == "linear":
        if not np.allclose(out.sum(axis=1), 1.0, atol=1e-9):
            raise AssertionError("linear weights do not sum to one")
    elif variant == "pure":
        if not abs(out - 1.0) < 1e-6:
            raise AssertionError(f"pure operator norm {out} is not ~1")
    elif not np.all(np.isfinite(out)):
        raise AssertionError("softmax output is not finite")


def fit_slope(sizes, times):
    """Least-squares slope of ``log(time)`` against ``log(N)``."""
    x = np.log(np.asarray(sizes, dtype=np.float64))
    y = np.log(np.asarray(times, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


def _time_one(variant, n, repeats, rng, epsilon, gamma):
    args = _inputs(variant, n, rng)
    run = _runner(variant, epsilon, gamma)
    _validate(variant, run(*args))
    for _ in range(WARMUPS - 1):
        run(*args)
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run(*args)
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def bench_scaling(variant, sizes=DEFAULT_SIZES, repeats=MIN_REPEATS, seed=0,
                  threads=1, epsilon=DEFAULT_EPS, gamma=DEFAULT_GAMMA):
    """Time one variant across ``sizes``; returns ``(records, slope)``.

    Sizes that exhaust memory are recorded with ``oom=True`` and left out of
    the fit. ``threads`` caps the BLAS pool (1 keeps slopes algorithmic).
    """
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    sizes = [int(s) for s in sizes]
    if len(sizes) < MIN_SIZES:
        raise UsageError(f"need at least {MIN_SIZES} sizes, got {len(sizes)}")
    if any(b <= a for a, b in zip(sizes, sizes[1:])) or sizes[0] < 1:
        raise UsageError("sizes must be positive and strictly increasing")
    if repeats < MIN_REPEATS:
        raise UsageError(f"repeats must be >= {MIN_REPEATS}, got {repeats}")
    rng = np.random.default_rng(seed)
    records = []
    with threadpool_limits(limits=int(threads)):
        for n in sizes:
            try:
                t = _time_one(variant, n, repeats, rng, epsilon, gamma)
            except MemoryError:
                records.append(BenchRecord(variant, n, float("nan"), repeats, oom=True))
                continue
            records.append(BenchRecord(variant, n, t, repeats))
    upper = [r for r in records[len(records) // 2:] if not r.oom]
    slope = fit_slope([r.n_tokens for r in upper], [r.wall_time for r in upper]) if len(upper) >= 2 else float("nan")
    return records, slope


def records_to_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow((r.variant, r.n_tokens, "OOM" if r.oom else f"{r.wall_time:.6e}", r.repeats))
    return buf.getvalue()


# ----------------------------------------------------------------------------
# compiled vs pure-Python kernels


def _best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def compare_backends(repeats=3, seed=0):
    """Time each hot kernel under every importable backend.

    Returns a list of ``(kernel, backend, seconds)`` rows. Both backends must
    agree bit-for-bit on these inputs; a mismatch raises ``AssertionError``.
    """
    from infsa._backend import available_backends

    rng = np.random.default_rng(seed)
    a = rng.standard_normal((200, 200)) + 200 * np.eye(200)
    b = rng.standard_normal((200, 200))
    small = rng.random((8, 8))
    m = 0.7 * rng.random((5, 5)) / 5
    cdf = np.cumsum(m, axis=1)

    rows = []
    ref = {}
    for name, k in available_backends().items():
        lu, piv = k.lu_factor(a, 1e-12)
        cases = {
            "lu_factor(200)": lambda k=k: k.lu_factor(a, 1e-12),
            "lu_solve(200x200)": lambda k=k: k.lu_solve(lu, piv, b),
            "path_sum(N=8,t=5)": lambda k=k: k.path_sum(small, 0, 7, 5),
            "walk_counts(20000)": lambda k=k: k.walk_counts(cdf, seed, 0, 0, 20000, 10**6),
        }
        outs = {
            "lu_solve(200x200)": k.lu_solve(lu, piv, b),
            "path_sum(N=8,t=5)": k.path_sum(small, 0, 7, 5),
            "walk_counts(20000)": k.walk_counts(cdf, seed, 0, 0, 20000, 10**6)[0],
        }
        for key, val in outs.items():
            if key in ref and not np.array_equal(ref[key], val):
                raise AssertionError(f"backends disagree on {key}")
            ref.setdefault(key, val)
        for kernel, fn in cases.items():
            rows.append((kernel, name, _best_of(fn, repeats)))
    return rows

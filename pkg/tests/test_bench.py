import numpy as np
import pytest

from infsa import UsageError
from infsa.bench import (
    CSV_HEADER,
    bench_scaling,
    compare_backends,
    fit_slope,
    records_to_csv,
    softmax_attention_streaming,
)


def test_fit_slope_exact():
    n = np.array([10, 20, 40, 80])
    assert fit_slope(n, 3e-6 * n**2) == pytest.approx(2.0, abs=1e-12)
    assert fit_slope(n, 5e-3 * n) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("sizes,repeats", [([64, 128, 256], 5), ([64, 32, 128, 256], 5),
                                           ([64, 64, 128, 256], 5), ([64, 128, 256, 512], 4)])
def test_usage_errors(sizes, repeats):
    with pytest.raises(UsageError):
        bench_scaling("linear", sizes, repeats)


def test_unknown_variant():
    with pytest.raises(UsageError):
        bench_scaling("cubic", [1, 2, 3, 4])


@pytest.mark.parametrize("variant", ["pure", "linear", "softmax-baseline"])
def test_small_run(variant):
    records, slope = bench_scaling(variant, [32, 64, 128, 256], repeats=5, seed=1)
    assert [r.n_tokens for r in records] == [32, 64, 128, 256]
    assert all(r.wall_time > 0 and r.repeats == 5 and not r.oom for r in records)
    assert np.isfinite(slope)
    lines = records_to_csv(records).splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 5 and lines[1].startswith(f"{variant},32,")


def test_softmax_rows_sum_to_one(rng):
    q, k = rng.standard_normal((70, 4)), rng.standard_normal((70, 4))
    z = softmax_attention_streaming(q, k, np.eye(70)[:, :70], block_rows=16)
    np.testing.assert_allclose(z.sum(axis=1), 1.0, rtol=1e-12)


def test_compare_backends_rows():
    rows = compare_backends(repeats=1)
    kernels = {r[0] for r in rows}
    assert len(kernels) == 4
    assert all(t > 0 for _, _, t in rows)

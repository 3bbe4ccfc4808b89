"""Time the compiled kernels against the numpy fallback.

    python benchmarks/compare_backends.py [--repeats 5] [--seed 0]

Both backends are checked for bit-identical results before timing.
"""

import argparse

from infsa.bench import compare_backends


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    rows = compare_backends(args.repeats, args.seed)
    times = {(k, b): t for k, b, t in rows}
    kernels = list(dict.fromkeys(k for k, _, _ in rows))
    print(f"{'kernel':<22}{'python_s':>12}{'compiled_s':>12}{'speedup':>10}")
    for k in kernels:
        py = times[(k, "python")]
        comp = times.get((k, "compiled"))
        if comp is None:
            print(f"{k:<22}{py:>12.3e}{'n/a':>12}{'n/a':>10}")
        else:
            print(f"{k:<22}{py:>12.3e}{comp:>12.3e}{py / comp:>9.1f}x")


if __name__ == "__main__":
    main()

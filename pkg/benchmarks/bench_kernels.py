"""Time the numba loops against the numpy fallbacks on random masks.

    python benchmarks/bench_kernels.py [--sizes 64 128 256] [--repeat 5]

Both implementations are imported side by side from ``kernels.IMPLS``, so the
``LAKEPROMPT_NO_NUMBA`` flag does not matter here. Outputs are compared before
timing.
"""
import argparse
import timeit

import numpy as np

from lakeprompt import kernels


def cases(size, rng):
    mask = (rng.random((size, size)) < 0.55).astype(np.uint8)
    se = np.ones((5, 5), np.uint8)
    offsets = kernels.disc_offsets(1.5)
    return {
        "dilate 5x5": lambda impl: impl["dilate"](mask, se),
        "erode 5x5": lambda impl: impl["erode"](mask, se),
        "dbscan eps=1.5 min_pts=4": lambda impl: kernels.canonical_labels(impl["dbscan"](mask, offsets, 4)),
        "border flood": lambda impl: impl["border_reach"](1 - mask),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    fast, slow = kernels.IMPLS["numba"], kernels.IMPLS["numpy"]
    print(f"{'kernel':<26}{'size':>6}{'numba ms':>11}{'numpy ms':>11}{'speedup':>9}")
    for size in args.sizes:
        for name, run in cases(size, rng).items():
            if not np.array_equal(run(fast), run(slow)):  # also triggers compilation
                raise SystemExit(f"{name}: implementations disagree at size {size}")
            t_fast = min(timeit.repeat(lambda: run(fast), number=1, repeat=args.repeat)) * 1e3
            t_slow = min(timeit.repeat(lambda: run(slow), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:<26}{size:>6}{t_fast:>11.3f}{t_slow:>11.3f}{t_slow / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()

"""Compare the compiled kernels against the pure-numpy fallback.

Runs both backends on identical inputs, checks they agree bit for bit, and
prints wall-clock timings.  Usage:

    python3 benchmarks/kernel_bench.py [--rows 2000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from formbench._kernels import fallback

try:
    from formbench._kernels import _native as native
except ImportError:
    native = None


def _bench(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_fill(height: int, width: int, repeat: int) -> None:
    rng = np.random.default_rng(7)
    base = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    boxes = []
    for _ in range(64):
        x0 = int(rng.integers(1, width - 200))
        y0 = int(rng.integers(0, height - 100))
        boxes.append((x0, y0, x0 + 180, y0 + 90))

    def run(impl):
        img = base.copy()
        for x0, y0, x1, y1 in boxes:
            impl.fill_rows_linear(img, x0, y0, x1, y1)
        return img

    numpy_s = _bench(lambda: run(fallback), repeat)
    print(f"fill_rows_linear  numpy   {numpy_s * 1e3:8.2f} ms")
    if native is None:
        print("fill_rows_linear  native  (extension not built)")
        return
    native_s = _bench(lambda: run(native), repeat)
    print(f"fill_rows_linear  native  {native_s * 1e3:8.2f} ms "
          f"({numpy_s / native_s:.1f}x)")
    if not np.array_equal(run(fallback), run(native)):
        raise AssertionError("backends disagree on fill_rows_linear output")
    print("fill_rows_linear  backends agree bit for bit")


def bench_contains(points_n: int, boxes_n: int, repeat: int) -> None:
    rng = np.random.default_rng(11)
    centers = rng.random((points_n, 2))
    lo = rng.random((boxes_n, 2)) * 0.5
    hi = lo + 0.25
    boxes = np.concatenate([lo, hi], axis=1)

    numpy_s = _bench(lambda: fallback.pair_contains(boxes, centers), repeat)
    print(f"pair_contains     numpy   {numpy_s * 1e3:8.2f} ms")
    if native is None:
        print("pair_contains     native  (extension not built)")
        return
    native_s = _bench(lambda: native.pair_contains(boxes, centers), repeat)
    print(f"pair_contains     native  {native_s * 1e3:8.2f} ms "
          f"({numpy_s / native_s:.1f}x)")
    if not np.array_equal(
        fallback.pair_contains(boxes, centers),
        native.pair_contains(boxes, centers),
    ):
        raise AssertionError("backends disagree on pair_contains output")
    print("pair_contains     backends agree bit for bit")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=2000)
    parser.add_argument("--cols", type=int, default=1600)
    parser.add_argument("--points", type=int, default=2000)
    parser.add_argument("--boxes", type=int, default=2000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    bench_fill(args.rows, args.cols, args.repeat)
    bench_contains(args.points, args.boxes, args.repeat)


if __name__ == "__main__":
    main()

"""Time the numba and numpy metric kernels on random box arrays.

    python benchmarks/bench_kernels.py [--frames 1000000] [--repeats 5]

Both backends are checked for identical output before timing. The first
numba call (compilation, or cache load) is excluded.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from midfusion.evalkit import kernels


def random_boxes(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    gt = np.column_stack([rng.uniform(0, 600, n), rng.uniform(0, 400, n), rng.uniform(5, 120, n),
                          rng.uniform(5, 120, n)])
    gt[rng.uniform(size=n) < 0.05, 2:] = 0  # absent frames
    pred = gt + rng.normal(0, 8, size=gt.shape)
    return pred, gt


def run(backend: str, pred, gt, thresholds, repeats: int) -> tuple[float, tuple]:
    kernels.set_backend(backend)
    out = kernels.frame_metrics(pred, gt)
    kernels.count_le(out[0], thresholds)
    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter()
        out = kernels.frame_metrics(pred, gt)
        counts = kernels.count_le(out[0][out[3]], thresholds)
        best = min(best, time.perf_counter() - t)
    return best, (*out, counts)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=1_000_000)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    pred, gt = random_boxes(np.random.default_rng(args.seed), args.frames)
    thresholds = np.arange(51, dtype=np.float64)
    t_np, ref = run("numpy", pred, gt, thresholds, args.repeats)
    print(f"numpy  {args.frames:>9} frames  {t_np * 1e3:9.2f} ms")
    if not kernels.numba_available():
        print("numba not installed; skipped")
        return
    t_nb, got = run("numba", pred, gt, thresholds, args.repeats)
    for a, b in zip(ref, got):
        assert np.array_equal(a, b), "backends disagree"
    print(f"numba  {args.frames:>9} frames  {t_nb * 1e3:9.2f} ms  (speed-up x{t_np / t_nb:.2f})")


if __name__ == "__main__":
    main()

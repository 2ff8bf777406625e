#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

Runs every kernel on a production-sized grid (224 x 162 x 72 voxels, the
imaging-window shape this pipeline processes per channel) and prints the
per-call time for both backends. Usage:

    python benchmarks/bench_kernels.py [--repeats 20]
"""

import argparse
import time

import numpy as np

from dixonvol.kernels import _fallback

try:
    from dixonvol.kernels import _native
except ImportError:
    _native = None

DIMS = (224, 162, 72)


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    n = DIMS[0] * DIMS[1] * DIMS[2]
    mask_a = (rng.random(n) < 0.01).astype(np.uint8)
    mask_b = (rng.random(n) < 0.01).astype(np.uint8)
    mask_3d = np.ascontiguousarray(mask_a.reshape(DIMS))
    intensities = rng.uniform(0, 1000, n).astype(np.float32)
    logits_fg = rng.normal(0, 1, n).astype(np.float32)
    logits_bg = rng.normal(0, 1, n).astype(np.float32)

    cases = {
        "dice_counts": lambda impl: impl.dice_counts(mask_a, mask_b),
        "count_foreground": lambda impl: impl.count_foreground(mask_a),
        "minmax": lambda impl: impl.minmax(intensities),
        "affine_f32": lambda impl: impl.affine_f32(intensities, 0.001, -0.5),
        "threshold_gt": lambda impl: impl.threshold_gt(logits_fg, 0.0),
        "argmax2": lambda impl: impl.argmax2(logits_fg, logits_bg),
        "face_touch(all 6)": lambda impl: [
            impl.face_touch(mask_3d, axis, last)
            for axis in range(3)
            for last in (False, True)
        ],
    }

    print(f"grid {DIMS} = {n:,} voxels, best of {args.repeats} runs\n")
    header = f"{'kernel':<20} {'numpy':>10} {'native':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, call in cases.items():
        t_py = timeit(lambda: call(_fallback), args.repeats)
        if _native is None:
            print(f"{name:<20} {t_py * 1e3:>8.3f}ms {'n/a':>10} {'':>8}")
            continue
        t_nat = timeit(lambda: call(_native), args.repeats)
        print(
            f"{name:<20} {t_py * 1e3:>8.3f}ms {t_nat * 1e3:>8.3f}ms "
            f"{t_py / t_nat:>7.2f}x"
        )
    if _native is None:
        print("\nnative kernels not built; showing fallback only")


if __name__ == "__main__":
    main()

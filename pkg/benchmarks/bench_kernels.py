"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 1024]

The numba times exclude the first (compiling) call.
"""

import argparse
import time

import numpy as np

from rscaption import _accel


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(size, rng):
    # blobby mask with a few hundred components
    mask = (rng.random((size, size)) < 0.002).astype(np.int32)
    for _ in range(3):
        mask = np.maximum.reduce([mask, np.roll(mask, 1, 0), np.roll(mask, 1, 1)])
    mask *= rng.integers(1, 6, size=mask.shape).astype(np.int32) * (mask > 0)

    hashes = rng.integers(0, 2**63, size=4 * size, dtype=np.int64).astype(np.uint64)
    half = hashes.size // 2
    hashes[half:] = hashes[:half] ^ np.uint64(1)  # second half: one-bit near copies

    n_img = size // 4
    scores = rng.normal(size=(n_img, 5 * n_img))
    cmap = rng.permutation(np.repeat(np.arange(n_img), 5))
    order = np.argsort(cmap, kind="stable")
    ptr = np.concatenate([[0], np.cumsum(np.bincount(cmap, minlength=n_img))])
    return {
        "component_boxes": (mask, 0, 4),
        "greedy_dedup": (hashes, 4),
        "best_ranks": (scores, ptr, order),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=1024)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"numba available: {_accel.NUMBA_AVAILABLE}, default backend: {_accel.BACKEND}")
    print(f"{'kernel':<18}{'numpy (s)':>12}{'numba (s)':>12}{'speedup':>10}  same")
    for name, call_args in cases(args.size, rng).items():
        np_fn = getattr(_accel, f"{name}_numpy")
        nb_fn = getattr(_accel, f"{name}_numba")
        t_np = best_of(lambda: np_fn(*call_args), args.repeat)
        if _accel.NUMBA_AVAILABLE:
            nb_fn(*call_args)  # compile
            t_nb = best_of(lambda: nb_fn(*call_args), args.repeat)
            same = np.array_equal(np_fn(*call_args), nb_fn(*call_args))
            print(f"{name:<18}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x  {same}")
        else:
            print(f"{name:<18}{t_np:>12.4f}{'-':>12}{'-':>10}  -")


if __name__ == "__main__":
    main()

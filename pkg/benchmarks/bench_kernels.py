"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both bodies are called directly, so one process covers both routes. The
first numba call (compilation or cache load) is excluded from the timing.
Outputs are compared before timing; a disagreement aborts the run.
"""
import argparse
import time

import numpy as np

from octosim import kernels as K


def _cases(rng):
    x = rng.integers(-128, 128, size=(640, 16), dtype=np.int8)
    w = rng.integers(-128, 128, size=(16, 16), dtype=np.int8)
    acc = rng.integers(-(1 << 20), 1 << 20, size=200_000).astype(np.int64)
    keys = rng.integers(0, 256, size=(50_000, 13), dtype=np.uint8)
    pool = rng.integers(-128, 128, size=(20 * 512, 32), dtype=np.int8)
    return {
        "systolic_ws 640x16x16": (K._nb_systolic_ws, K._np_systolic_ws, (x, w, 16)),
        "requantize 200k": (K._nb_requantize, K._np_requantize, (acc, 1518500250, 38, True, -128, 127)),
        "hash_keys 50k": (K._nb_hash_keys, K._np_hash_keys, (keys,)),
        "maxpool_groups 10k rows": (K._nb_maxpool_groups, K._np_maxpool_groups, (pool, 20, True)),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(p, q) for p, q in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def _time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.USE_NUMBA:
        print("numba disabled (OCTOSIM_DISABLE_NUMBA); the _nb_ bodies run as plain python")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, (nb, npy, a) in _cases(rng).items():
        if not _same(nb(*a), npy(*a)):
            raise SystemExit(f"{name}: numba and numpy disagree")
        t_nb = _time(nb, a, args.repeat)
        t_np = _time(npy, a, args.repeat)
        print(f"{name:<26}{t_nb * 1e3:>10.3f}{t_np * 1e3:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()

"""Time the MMD kernels on the numba and the pure-NumPy paths.

    python3 benchmarks/bench_kernels.py [--n 2000] [--d 2] [--repeat 3]

Both implementations are imported directly, so one process compares them
regardless of DIFFPRIOR_DISABLE_NUMBA. The numba functions are called once
before timing so compilation is excluded.
"""

import argparse
import time

import numpy as np

from diffprior import _kernels as K


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(args.n, args.d)), rng.normal(size=(args.n, args.d))
    pooled = np.concatenate([a, b])
    gamma = 0.5
    w = rng.normal(size=len(pooled))
    gram = K.rbf_gram_numpy(pooled, gamma)
    cases = {
        "rbf_mean": lambda impl: impl(a, b, gamma),
        "rbf_gram": lambda impl: impl(pooled, gamma),
        "weighted_quadratic": lambda impl: impl(gram, w),
        "pairwise_distances": lambda impl: impl(pooled),
    }
    print(f"n={args.n} d={args.d}; numba {'available' if K.numba is not None else 'not installed'}")
    print(f"{'kernel':<20} {'numpy s':>10} {'numba s':>10} {'speedup':>8}")
    for name, call in cases.items():
        t_np = best_of(lambda: call(getattr(K, f"{name}_numpy")), args.repeat)
        if K.numba is None:
            print(f"{name:<20} {t_np:>10.4f} {'-':>10} {'-':>8}")
            continue
        fast = getattr(K, f"{name}_numba")
        call(fast)
        t_nb = best_of(lambda: call(fast), args.repeat)
        print(f"{name:<20} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()

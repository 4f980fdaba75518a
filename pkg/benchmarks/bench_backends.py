"""Time the compiled kernels against the pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_backends.py --n 4096 --d 64 --repeats 5
"""

import argparse
import time

import numpy as np

from pointvig import backend


def bench(fn, repeats):
    fn()  # warm-up (triggers JIT compilation on the compiled backend)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_cases(n, d, k, m, r, seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-1, 1, size=(n, 3)).astype(np.float32)
    feats = rng.standard_normal((n, d)).astype(np.float32)
    sub = pos[: n // 4]
    flat = rng.standard_normal(n * d).astype(np.float32)
    idx = rng.integers(0, n // 4, size=n).astype(np.int64)
    rows = rng.standard_normal((n, d)).astype(np.float32)

    def cases(kern):
        return [
            ("knn", lambda: kern.knn_kernel(feats, k, True)),
            ("ball_query", lambda: kern.ball_query_kernel(pos, pos, r, m)),
            ("fps", lambda: kern.fps_kernel(pos, n // 4, 0)),
            ("three_nn", lambda: kern.three_nn_kernel(pos, sub)),
            ("gelu_fwd", lambda: kern.gelu_forward(flat)),
            ("scatter_add", lambda: kern.scatter_add_rows(
                np.zeros((n // 4, d), dtype=np.float32), idx, rows)),
        ]

    return cases


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4096)
    ap.add_argument("--d", type=int, default=64)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--m", type=int, default=32)
    ap.add_argument("--r", type=float, default=0.2)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cases = make_cases(args.n, args.d, args.k, args.m, args.r, args.seed)
    results = {}
    for name in ("numpy", "numba"):
        try:
            backend.set_backend(name)
        except Exception as exc:
            print(f"skipping backend {name}: {exc}")
            continue
        kern = backend.kernels()
        for label, fn in cases(kern):
            results.setdefault(label, {})[name] = bench(fn, args.repeats)
    backend.set_backend("auto")

    print(f"n={args.n} d={args.d} k={args.k} m={args.m} r={args.r} "
          f"(best of {args.repeats})")
    print(f"{'kernel':<12} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for label, times in results.items():
        np_t = times.get("numpy")
        nb_t = times.get("numba")
        if np_t is not None and nb_t is not None:
            print(f"{label:<12} {np_t*1e3:9.2f}ms {nb_t*1e3:9.2f}ms "
                  f"{np_t/nb_t:7.1f}x")
        elif np_t is not None:
            print(f"{label:<12} {np_t*1e3:9.2f}ms {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()

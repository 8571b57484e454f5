"""Time the compiled kernels against the pure-numpy fallback.

Run with `python benchmarks/benchmark_backends.py`.  The two backends consume
identical pre-generated random numbers, so this measures implementation speed
on the same work.
"""

import time

import numpy as np

from gcmc import _backend, _kernels_py


def _time(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_gibbs(impl, b, n, seed=0):
    rng = np.random.default_rng(seed)
    args = (
        0.3, 0.8, rng.normal(size=b), rng.uniform(0.5, 2.0, size=b),
        np.ones(b), 0.7, 0.1, rng.standard_normal((b, n)), rng.standard_normal(n), False,
    )
    return _time(lambda: impl.gaussian_gibbs_chain(*args))


def bench_rwm(impl, b, n, seed=0):
    rng = np.random.default_rng(seed)
    args = (
        False, rng.normal(size=b), -np.abs(rng.uniform(0.3, 1.0, size=b)),
        rng.normal(size=b), np.full(b, 1.5), rng.standard_normal((b, n)), rng.random((b, n)),
    )
    return _time(lambda: impl.rwm_quad_chains(*args))


def main():
    if not _backend.COMPILED:
        print("compiled extension unavailable; benchmarking the fallback against itself")
        compiled = _kernels_py
    else:
        from gcmc import _speedups as compiled

    cases = [
        ("gibbs chain  b=1  n=100000", lambda impl: bench_gibbs(impl, 1, 100_000)),
        ("gibbs chain  b=32 n=100000", lambda impl: bench_gibbs(impl, 32, 100_000)),
        ("rwm chains   b=32 n=20000", lambda impl: bench_rwm(impl, 32, 20_000)),
        ("rwm chains   b=1  n=100000", lambda impl: bench_rwm(impl, 1, 100_000)),
    ]
    print(f"{'kernel':<30} {'compiled':>12} {'python':>12} {'speedup':>9}")
    for name, runner in cases:
        t_c = runner(compiled)
        t_p = runner(_kernels_py)
        print(f"{name:<30} {t_c * 1e3:>10.2f}ms {t_p * 1e3:>10.2f}ms {t_p / t_c:>8.1f}x")


if __name__ == "__main__":
    main()

"""Time the numba and pure-numpy kernel backends side by side.

    python3 benchmarks/bench_kernels.py [--sizes 64 128 256] [--repeat 3]

Both backends are imported in-process; the env flag only picks the default.
Also reports the largest absolute difference between backend outputs.
"""
import argparse
import math
import time

import numpy as np

from moft import _kernels
from moft.tensor import EPS, MAX_SWEEPS


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def jacobi_case(backend, a):
    at = np.ascontiguousarray(a.T)
    vt = np.eye(a.shape[1])
    sched = _kernels.round_robin_schedule(a.shape[1])
    sweeps = backend(at, vt, sched, math.sqrt(a.shape[0]) * EPS, MAX_SWEEPS)
    return sweeps, np.sort(np.linalg.norm(at, axis=1))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    # Warm the JIT so compile time is not counted.
    small = rng.standard_normal((4, 4))
    _kernels.matmul_numba(small, small)
    jacobi_case(_kernels.jacobi_numba, small)
    _kernels.pair_distances_numba(small)

    print(f"{'kernel':<16}{'size':>6}{'numba s':>12}{'numpy s':>12}{'speedup':>10}{'max diff':>12}")
    for n in args.sizes:
        a, b = rng.standard_normal((n, n)), rng.standard_normal((n, n))
        v = a / np.linalg.norm(a, axis=1, keepdims=True)
        cases = [
            ("matmul", lambda f: f(a, b), _kernels.matmul_numba, _kernels.matmul_numpy),
            ("jacobi_svd", lambda f: jacobi_case(f, a)[1], _kernels.jacobi_numba, _kernels.jacobi_numpy),
            ("pair_distances", lambda f: f(v)[0], _kernels.pair_distances_numba, _kernels.pair_distances_numpy),
        ]
        for name, call, fast, slow in cases:
            t_fast, out_fast = best_of(lambda: call(fast), args.repeat)
            t_slow, out_slow = best_of(lambda: call(slow), args.repeat)
            diff = float(np.max(np.abs(out_fast - out_slow)))
            print(f"{name:<16}{n:>6}{t_fast:>12.4f}{t_slow:>12.4f}{t_slow / t_fast:>10.1f}{diff:>12.1e}")


if __name__ == "__main__":
    main()

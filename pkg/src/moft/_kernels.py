"""Hot numeric loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``MOFT_NUMBA`` is not set to
``0``/``false``/``off``. Both paths are always importable so they can be
benchmarked and cross-checked against each other.
"""
import math
import os
from functools import lru_cache

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("MOFT_NUMBA", "1").lower() not in ("0", "false", "off", "no")

BACKEND = "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# Fixed-order matrix product
# --------------------------------------------------------------------------

def matmul_numpy(a, b):
    # out[i, j] accumulates a[i, p] * b[p, j] for p = 0, 1, ..., k-1 in order.
    m, k = a.shape
    out = np.zeros((m, b.shape[1]))
    for p in range(k):
        out += np.multiply.outer(a[:, p], b[p, :])
    return out


def _matmul_py(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                out[i, j] += aip * b[p, j]
    return out


# --------------------------------------------------------------------------
# One-sided Jacobi orthogonalisation (Hestenes)
# --------------------------------------------------------------------------

@lru_cache(maxsize=64)
def round_robin_schedule(n):
    """Pair schedule covering every column pair once per sweep.

    Returns an int array of shape ``(rounds, pairs_per_round, 2)``; the pairs
    inside one round are disjoint, so they may be rotated in any order.
    """
    if n < 2:
        return np.zeros((0, 0, 2), dtype=np.int64)
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                pairs.append((min(p, q), max(p, q)))
        rounds.append(pairs)
        players = [players[0], players[-1]] + players[1:-1]
    width = max(len(r) for r in rounds)
    sched = np.full((len(rounds), width, 2), -1, dtype=np.int64)
    for k, pairs in enumerate(rounds):
        sched[k, : len(pairs)] = pairs
    sched.setflags(write=False)
    return sched


def _jacobi_py(a, v, schedule, tol, max_sweeps):
    # Rows of ``a`` (k×m) are the vectors being orthogonalised; ``v`` (k×k)
    # accumulates the same rotations row-wise.
    m = a.shape[1]
    n = v.shape[1]
    for sweep in range(max_sweeps):
        rotated = 0
        for rnd in range(schedule.shape[0]):
            for k in range(schedule.shape[1]):
                p = schedule[rnd, k, 0]
                q = schedule[rnd, k, 1]
                if p < 0:
                    continue
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    x = a[p, i]
                    y = a[q, i]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated += 1
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    x = a[p, i]
                    y = a[q, i]
                    a[p, i] = c * x - s * y
                    a[q, i] = s * x + c * y
                for i in range(n):
                    x = v[p, i]
                    y = v[q, i]
                    v[p, i] = c * x - s * y
                    v[q, i] = s * x + c * y
        if rotated == 0:
            return sweep + 1
    return -1


def jacobi_numpy(a, v, schedule, tol, max_sweeps):
    """Vectorised over the disjoint pairs of each round. Mutates ``a`` and ``v``."""
    for sweep in range(max_sweeps):
        rotated = 0
        for rnd in schedule:
            rnd = rnd[rnd[:, 0] >= 0]
            p, q = rnd[:, 0], rnd[:, 1]
            x, y = a[p], a[q]
            alpha = np.einsum("ij,ij->i", x, x)
            beta = np.einsum("ij,ij->i", y, y)
            gamma = np.einsum("ij,ij->i", x, y)
            active = (gamma != 0.0) & (np.abs(gamma) > tol * np.sqrt(alpha * beta))
            if not active.any():
                continue
            rotated += int(active.sum())
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            for mat in (a, v):
                x, y = mat[p], mat[q]
                mat[p] = c * x - s * y
                mat[q] = s * x + c * y
        if rotated == 0:
            return sweep + 1
    return -1


# --------------------------------------------------------------------------
# Pairwise distances between unit vectors (stored as rows)
# --------------------------------------------------------------------------

def pair_distances_numpy(v):
    """Return (‖v_i - v_j‖, ‖v_i + v_j‖) for all row pairs of ``v``."""
    n = v.shape[0]
    minus = np.zeros((n, n))
    plus = np.zeros((n, n))
    for i in range(n):
        row = v[i]
        dm = v[i + 1:] - row
        dp = v[i + 1:] + row
        dm = np.sqrt(np.einsum("ij,ij->i", dm, dm))
        dp = np.sqrt(np.einsum("ij,ij->i", dp, dp))
        minus[i, i + 1:] = dm
        minus[i + 1:, i] = dm
        plus[i, i + 1:] = dp
        plus[i + 1:, i] = dp
        plus[i, i] = 2.0 * math.sqrt(float(row @ row))
    return minus, plus


def _pair_distances_py(v):
    n, d = v.shape
    minus = np.zeros((n, n))
    plus = np.zeros((n, n))
    for i in range(n):
        s = 0.0
        for k in range(d):
            s += v[i, k] * v[i, k]
        plus[i, i] = 2.0 * math.sqrt(s)
        for j in range(i + 1, n):
            sm = 0.0
            sp = 0.0
            for k in range(d):
                x = v[i, k]
                y = v[j, k]
                sm += (x - y) * (x - y)
                sp += (x + y) * (x + y)
            minus[i, j] = math.sqrt(sm)
            minus[j, i] = minus[i, j]
            plus[i, j] = math.sqrt(sp)
            plus[j, i] = plus[i, j]
    return minus, plus


if HAVE_NUMBA:
    matmul_numba = numba.njit(cache=True)(_matmul_py)
    jacobi_numba = numba.njit(cache=True)(_jacobi_py)
    pair_distances_numba = numba.njit(cache=True)(_pair_distances_py)
else:  # pragma: no cover
    matmul_numba = jacobi_numba = pair_distances_numba = None


if USE_NUMBA:
    matmul_kernel = matmul_numba
    jacobi_kernel = jacobi_numba
    pair_distances_kernel = pair_distances_numba
else:
    matmul_kernel = matmul_numpy
    jacobi_kernel = jacobi_numpy
    pair_distances_kernel = pair_distances_numpy

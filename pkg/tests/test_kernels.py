import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from moft import _kernels

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


@pytest.mark.parametrize("n", [1, 2, 3, 4, 7, 8, 17])
def test_schedule_covers_each_pair_once(n):
    sched = _kernels.round_robin_schedule(n)
    seen = []
    for rnd in sched:
        used = [int(x) for pair in rnd if pair[0] >= 0 for x in pair]
        assert len(used) == len(set(used)), "pairs in one round must be disjoint"
        seen += [tuple(p) for p in rnd if p[0] >= 0]
    expected = {(i, j) for i in range(n) for j in range(i + 1, n)}
    assert sorted(seen) == sorted(expected)


def test_schedule_is_read_only():
    with pytest.raises(ValueError):
        _kernels.round_robin_schedule(5)[0, 0, 0] = 3


@needs_numba
@pytest.mark.parametrize("shape", [(1, 1, 1), (5, 3, 4), (17, 9, 13)])
def test_matmul_backends_bitwise_equal(shape):
    m, k, n = shape
    rng = np.random.default_rng(m * 100 + n)
    a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
    assert np.array_equal(_kernels.matmul_numba(a, b), _kernels.matmul_numpy(a, b))


@needs_numba
def test_jacobi_backends_agree():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((6, 20))
    sched = _kernels.round_robin_schedule(6)
    tol = math.sqrt(20) * np.finfo(float).eps
    a1, v1 = a.copy(), np.eye(6)
    a2, v2 = a.copy(), np.eye(6)
    s1 = _kernels.jacobi_numba(a1, v1, sched, tol, 30)
    s2 = _kernels.jacobi_numpy(a2, v2, sched, tol, 30)
    assert s1 == s2 > 0
    np.testing.assert_allclose(a1, a2, rtol=0, atol=1e-12)
    np.testing.assert_allclose(v1, v2, rtol=0, atol=1e-12)


def test_jacobi_reports_non_convergence():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((8, 8))
    sweeps = _kernels.jacobi_kernel(a, np.eye(8), _kernels.round_robin_schedule(8), 1e-300, 1)
    assert sweeps == -1


@needs_numba
def test_pair_distance_backends_agree():
    rng = np.random.default_rng(5)
    v = rng.standard_normal((9, 4))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for x, y in zip(_kernels.pair_distances_numba(v), _kernels.pair_distances_numpy(v)):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-15)


def test_pair_distances_against_direct_norms():
    rng = np.random.default_rng(6)
    v = rng.standard_normal((5, 3))
    minus, plus = _kernels.pair_distances_kernel(v)
    for i in range(5):
        for j in range(5):
            assert minus[i, j] == pytest.approx(np.linalg.norm(v[i] - v[j]), abs=1e-14)
            assert plus[i, j] == pytest.approx(np.linalg.norm(v[i] + v[j]), abs=1e-14)


@pytest.mark.parametrize("flag,expected", [("0", "numpy"), ("off", "numpy"), ("1", "numba")])
def test_env_flag_selects_backend(flag, expected):
    if expected == "numba" and not _kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    env = dict(os.environ, MOFT_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "import moft; print(moft.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == expected


@needs_numba
def test_svd_agrees_under_both_backends():
    # Dot-product summation order differs, so agreement is to rounding, not bitwise.
    code = ("import json, numpy as np; from moft import svd_exact; "
            "s = svd_exact(np.random.default_rng(0).standard_normal((12, 7))); "
            "print(json.dumps(np.concatenate([s.U.ravel(), s.S, s.V.ravel()]).tolist()))")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, MOFT_NUMBA=flag)
        outs.append(np.array(json.loads(subprocess.run([sys.executable, "-c", code], capture_output=True,
                                                 text=True, env=env, check=True).stdout)))
    np.testing.assert_allclose(outs[0], outs[1], rtol=0, atol=1e-13)

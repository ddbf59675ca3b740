"""Dense matrix helpers and singular value decompositions.

Matrices are plain 2-D ``float64`` numpy arrays. Every public function
validates its inputs through :func:`as_matrix`, so callers may pass lists or
``float32`` arrays and get promoted copies back.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidInput, InvalidRank, NumericalFailure, ShapeError

EPS = np.finfo(np.float64).eps
MAX_SWEEPS = 30


def as_matrix(x, name="matrix", allow_empty=False):
    """Coerce ``x`` to a C-contiguous float64 2-D array and check finiteness."""
    a = np.asarray(x)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if not allow_empty and 0 in a.shape:
        raise ShapeError(f"{name} must be non-empty, got shape {a.shape}")
    if a.dtype.kind not in "biuf":
        raise InvalidInput(f"{name} must be real-valued, got dtype {a.dtype}")
    a = np.ascontiguousarray(a, dtype=np.float64)
    if not np.isfinite(a).all():
        raise InvalidInput(f"{name} contains NaN or Inf")
    return a


def matmul(a, b):
    """Matrix product with a fixed left-to-right reduction order.

    Results are bitwise reproducible across runs and across the numba and
    numpy kernel backends.
    """
    a = as_matrix(a, "left operand", allow_empty=True)
    b = as_matrix(b, "right operand", allow_empty=True)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _kernels.matmul_kernel(a, b)


def transpose(a):
    return np.ascontiguousarray(as_matrix(a, allow_empty=True).T)


def frobenius_norm(a):
    a = as_matrix(a, allow_empty=True)
    return float(math.sqrt(np.einsum("ij,ij->", a, a)))


def identity(k):
    if k < 1:
        raise InvalidInput(f"identity size must be positive, got {k}")
    return np.eye(k)


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``W ≈ U @ diag(S) @ V.T`` with ``U`` (d×k), ``S`` (k,), ``V`` (n×k)."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    @property
    def rank(self):
        return self.S.shape[0]

    def reconstruct(self):
        return matmul(self.U * self.S, self.V.T)

    def full_left_basis(self):
        """Complete ``U`` to a d×d orthonormal basis (first k columns unchanged)."""
        d, k = self.U.shape
        if k == d:
            return self.U.copy()
        out = np.zeros((d, d))
        out[:, :k] = self.U
        valid = np.zeros(d, dtype=bool)
        valid[:k] = True
        return _complete_columns(out, valid)


def _complete_columns(q, valid):
    """Fill the columns of ``q`` where ``valid`` is False with orthonormal
    vectors orthogonal to the valid ones. Deterministic: candidates are the
    standard basis vectors in index order."""
    q = q.copy()
    d = q.shape[0]
    missing = [j for j in range(q.shape[1]) if not valid[j]]
    if not missing:
        return q
    basis = [q[:, j] for j in range(q.shape[1]) if valid[j]]
    candidate = 0
    for j in missing:
        while True:
            if candidate >= d:
                raise NumericalFailure("could not complete orthonormal basis")
            e = np.zeros(d)
            e[candidate] = 1.0
            candidate += 1
            for _ in range(2):
                for b in basis:
                    e -= (b @ e) * b
            norm = math.sqrt(e @ e)
            if norm > 1e-6:
                break
        e /= norm
        q[:, j] = e
        basis.append(e)
    return q


def _fix_signs(u, v):
    """Make the largest-magnitude entry of each column of ``u`` positive
    (first occurrence wins ties) and flip the matching column of ``v``."""
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * signs, v * signs


def _jacobi_thin(a):
    """Orthogonalise the columns of ``a`` (m×k, m >= k).

    Returns ``(Ua, S, V)`` with ``a_original = Ua @ diag(S) @ V.T``, singular
    values sorted non-increasing. Columns of ``Ua`` whose singular value is
    exactly zero are completed to an orthonormal set.
    """
    m, k = a.shape
    at = np.ascontiguousarray(a.T)
    vt = np.eye(k)
    tol = math.sqrt(m) * EPS
    sweeps = _kernels.jacobi_kernel(at, vt, _kernels.round_robin_schedule(k), tol, MAX_SWEEPS)
    if sweeps < 0:
        raise NumericalFailure(f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps")
    a, v = at.T, vt.T
    s = np.sqrt(np.einsum("ij,ij->j", a, a))
    order = np.argsort(-s, kind="stable")
    s, a, v = s[order], a[:, order], v[:, order]
    nonzero = s > 0.0
    u = np.zeros_like(a)
    u[:, nonzero] = a[:, nonzero] / s[nonzero]
    if not nonzero.all():
        u = _complete_columns(u, nonzero)
    return u, s, v


def svd_exact(W):
    """Full thin SVD by one-sided Jacobi rotations, ``k = min(d, n)``."""
    W = as_matrix(W, "W")
    d, n = W.shape
    if d >= n:
        u, s, v = _jacobi_thin(W.copy())
    else:
        # Orthogonalise the rows instead: W.T = Ua S V'.T, so W = V' S Ua.T.
        v, s, u = _jacobi_thin(np.ascontiguousarray(W.T))
    u, v = _fix_signs(u, v)
    return SvdResult(np.ascontiguousarray(u), s, np.ascontiguousarray(v))


def _orth(y):
    return np.linalg.qr(y, mode="reduced")[0]


def svd_randomized(W, r, n_iter=10, seed=0, oversample=10):
    """Rank-``r`` SVD via a Gaussian range finder with ``n_iter`` power iterations.

    The sketch carries ``oversample`` extra columns (capped at ``min(d, n)``)
    and is re-orthonormalised by QR after every multiplication.
    """
    W = as_matrix(W, "W")
    d, n = W.shape
    kmax = min(d, n)
    if not isinstance(r, (int, np.integer)) or not 1 <= r <= kmax:
        raise InvalidRank(f"rank must be in [1, {kmax}], got {r}")
    if n_iter < 0:
        raise InvalidInput(f"n_iter must be non-negative, got {n_iter}")
    k = min(r + max(oversample, 0), kmax)
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((n, k))
    Wt = transpose(W)
    Q = _orth(matmul(W, omega))
    for _ in range(n_iter):
        Q = _orth(matmul(Wt, Q))
        Q = _orth(matmul(W, Q))
    small = svd_exact(matmul(transpose(Q), W))
    u = matmul(Q, small.U[:, :r])
    u, v = _fix_signs(u, small.V[:, :r])
    return SvdResult(np.ascontiguousarray(u), small.S[:r].copy(), np.ascontiguousarray(v))

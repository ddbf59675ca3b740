"""Angular structure of weight columns: hyperspherical energy, pairwise
angles, and the subspace angle-preservation check.

Neurons are the columns ``w_i`` of a d×n matrix.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateColumn, InvalidInput, InvalidRotation
from .tensor import as_matrix, frobenius_norm, matmul, transpose

COLUMN_EPS = 1e-12


def _unit_rows(W, eps_col=COLUMN_EPS):
    """Columns of ``W`` normalised to unit length, returned as rows."""
    W = as_matrix(W, "W")
    norms = np.sqrt(np.einsum("ij,ij->j", W, W))
    bad = np.flatnonzero(norms <= eps_col)
    if bad.size:
        raise DegenerateColumn(f"column {int(bad[0])} has norm {norms[bad[0]]:.3e} <= {eps_col:g}")
    return np.ascontiguousarray((W / norms).T)


def hyperspherical_energy(W, eps=1e-12, eps_col=COLUMN_EPS):
    """Sum over ordered pairs i != j of ``1 / max(|w_i/|w_i| - w_j/|w_j||, eps)``."""
    if eps < 0:
        raise InvalidInput("eps must be non-negative")
    minus, _ = _kernels.pair_distances_kernel(_unit_rows(W, eps_col))
    n = minus.shape[0]
    off = minus[~np.eye(n, dtype=bool)]
    if eps == 0.0 and np.any(off == 0.0):
        raise InvalidInput("coincident columns give infinite energy; use eps > 0")
    return float(np.sum(1.0 / np.maximum(off, eps)))


@dataclass(frozen=True, eq=False)
class AngleMatrix:
    theta: np.ndarray

    @property
    def n(self):
        return self.theta.shape[0]

    def off_diagonal(self):
        return self.theta[~np.eye(self.n, dtype=bool)]


def pairwise_angles(W):
    """Angles in [0, pi] between every pair of columns.

    Uses ``2 atan2(|u - v|, |u + v|)`` on the unit columns, which equals
    ``arccos(u.v)`` but stays accurate for nearly (anti)parallel pairs.
    """
    minus, plus = _kernels.pair_distances_kernel(_unit_rows(W))
    theta = 2.0 * np.arctan2(minus, plus)
    np.fill_diagonal(theta, 0.0)
    theta = np.clip(theta, 0.0, math.pi)
    return AngleMatrix(theta)


@dataclass(frozen=True)
class PreservationReport:
    max_angle_delta: float
    condition_residual: float
    gram_norm: float
    nondegenerate: bool
    tol: float
    passes: bool

    def to_dict(self):
        return {
            "max_angle_delta": self.max_angle_delta,
            "condition_residual": self.condition_residual,
            "gram_norm": self.gram_norm,
            "nondegenerate": self.nondegenerate,
            "tol": self.tol,
            "passes": self.passes,
        }


def has_nondegenerate_pair(dec, threshold=1e-6):
    """True when some pair i != j has ``|b_i^T G b_j| > threshold``, G = A^T A."""
    G = matmul(transpose(dec.A), dec.A)
    cross = matmul(matmul(transpose(dec.B), G), dec.B)
    np.fill_diagonal(cross, 0.0)
    return bool(np.max(np.abs(cross)) > threshold)


def check_preservation(dec, R, tol=1e-8, orth_tol=1e-8):
    """Compare column angles of ``A R B`` against ``A B``.

    ``condition_residual`` is ``|R^T G R - G|_F``; the check passes iff the
    largest angle change is at most ``tol``.
    """
    R = as_matrix(R, "R")
    if R.shape != (dec.r, dec.r):
        raise InvalidRotation(f"R must be {dec.r}x{dec.r}, got {R.shape}")
    if frobenius_norm(matmul(transpose(R), R) - np.eye(dec.r)) > orth_tol:
        raise InvalidRotation("R is not orthogonal")
    G = matmul(transpose(dec.A), dec.A)
    residual = frobenius_norm(matmul(matmul(transpose(R), G), R) - G)
    before = pairwise_angles(matmul(dec.A, dec.B)).theta
    after = pairwise_angles(matmul(matmul(dec.A, R), dec.B)).theta
    delta = float(np.max(np.abs(after - before))) if before.size > 1 else 0.0
    return PreservationReport(
        max_angle_delta=delta,
        condition_residual=residual,
        gram_norm=frobenius_norm(G),
        nondegenerate=has_nondegenerate_pair(dec),
        tol=tol,
        passes=delta <= tol,
    )

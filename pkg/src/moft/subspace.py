"""Principal/residual split of a weight matrix and its reconstruction.

Two factorisations of the top-``r`` part ``U_r S_r V_r^T`` are supported:

* ``moft``:  ``A = U_r``          and ``B = S_r V_r^T``  (``A^T A = I``)
* ``pissa``: ``A = U_r sqrt(S_r)`` and ``B = sqrt(S_r) V_r^T``

The residual ``W_res`` holds everything outside the top ``r`` components and
is stored densely.
"""
import hashlib
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InvalidBasis, InvalidInput, InvalidRank, RankDeficientWarning, ShapeError
from .tensor import EPS, as_matrix, frobenius_norm, matmul, svd_exact, svd_randomized, transpose


class Variant(str, Enum):
    MOFT = "moft"
    PISSA = "pissa"


@dataclass(frozen=True)
class SvdMode:
    kind: str = "exact"
    n_iter: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("exact", "randomized"):
            raise InvalidInput(f"unknown svd mode {self.kind!r}")
        if self.n_iter < 0:
            raise InvalidInput("n_iter must be non-negative")

    def to_dict(self):
        if self.kind == "exact":
            return {"kind": "exact"}
        return {"kind": "randomized", "n_iter": self.n_iter, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d.get("n_iter", 10), d.get("seed", 0))


EXACT = SvdMode("exact")


def randomized(n_iter=10, seed=0):
    return SvdMode("randomized", n_iter, seed)


@dataclass(frozen=True, eq=False)
class SubspaceDecomposition:
    A: np.ndarray
    B: np.ndarray
    W_res: np.ndarray
    r: int
    variant: Variant
    svd_mode: SvdMode
    singular_values: np.ndarray
    left_basis: Optional[np.ndarray] = None
    rank_deficient: bool = False
    source_sha256: Optional[str] = None

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.B.shape[1]

    def principal(self):
        return matmul(self.A, self.B)

    def weights(self):
        """``A @ B + W_res``, i.e. the source matrix up to rounding."""
        return self.principal() + self.W_res


def _check_rank(r, d, n):
    kmax = min(d, n)
    if isinstance(r, bool) or not isinstance(r, (int, np.integer)) or not 1 <= r <= kmax:
        raise InvalidRank(f"rank must be an integer in [1, {kmax}], got {r!r}")
    return int(r)


def decompose(W_pre, r, variant=Variant.MOFT, svd_mode=EXACT):
    W = as_matrix(W_pre, "W_pre")
    d, n = W.shape
    r = _check_rank(r, d, n)
    variant = Variant(variant)

    left_basis = None
    if svd_mode.kind == "exact":
        svd = svd_exact(W)
        U, S, V = svd.U, svd.S, svd.V
        W_res = matmul(U[:, r:] * S[r:], transpose(V[:, r:]))
        left_basis = svd.full_left_basis()
        spectrum = S
    else:
        svd = svd_randomized(W, r, svd_mode.n_iter, svd_mode.seed)
        U, S, V = svd.U, svd.S, svd.V
        W_res = W - matmul(U * S, transpose(V))
        spectrum = S

    Ur, Sr, Vrt = U[:, :r], S[:r], transpose(V[:, :r])
    if variant is Variant.MOFT:
        A = np.ascontiguousarray(Ur)
        B = Sr[:, None] * Vrt
    else:
        root = np.sqrt(Sr)
        A = Ur * root
        B = root[:, None] * Vrt

    cutoff = max(d, n) * EPS * (spectrum[0] if spectrum.size else 0.0)
    numerical_rank = int(np.count_nonzero(spectrum > cutoff))
    deficient = r > numerical_rank
    if deficient:
        warnings.warn(
            f"rank {r} exceeds numerical rank {numerical_rank} of the source matrix",
            RankDeficientWarning,
            stacklevel=2,
        )
    return SubspaceDecomposition(
        A=A, B=np.ascontiguousarray(B), W_res=W_res, r=r, variant=variant,
        svd_mode=svd_mode, singular_values=Sr.copy(), left_basis=left_basis,
        rank_deficient=deficient, source_sha256=hashlib.sha256(W.tobytes()).hexdigest(),
    )


def _check_square(R, r):
    R = as_matrix(R, "R")
    if R.shape != (r, r):
        raise ShapeError(f"R must be {r}x{r}, got {R.shape}")
    return R


def reconstruct(dec, R):
    """``A @ R @ B + W_res``."""
    R = _check_square(R, dec.r)
    return matmul(matmul(dec.A, R), dec.B) + dec.W_res


def embed_full_space(dec, R, U_full=None, tol=1e-10):
    """Apply ``R`` as the full-space rotation ``U_full blkdiag(R, I) U_full^T``.

    ``U_full`` defaults to the complete left singular basis kept by an exact
    decomposition. For a ``moft`` decomposition the result equals
    :func:`reconstruct` up to rounding.
    """
    if dec.variant is not Variant.MOFT:
        raise InvalidInput("full-space embedding requires a moft decomposition")
    R = _check_square(R, dec.r)
    if U_full is None:
        if dec.left_basis is None:
            raise InvalidBasis("decomposition carries no full left basis; pass U_full explicitly")
        U_full = dec.left_basis
    U_full = as_matrix(U_full, "U_full")
    d, r = dec.d, dec.r
    if U_full.shape != (d, d):
        raise InvalidBasis(f"U_full must be {d}x{d}, got {U_full.shape}")
    if frobenius_norm(matmul(transpose(U_full), U_full) - np.eye(d)) > tol:
        raise InvalidBasis("U_full columns are not orthonormal")
    if frobenius_norm(U_full[:, :r] - dec.A) > 1e-8:
        raise InvalidBasis("leading columns of U_full do not match the decomposition's A")
    R_full = np.eye(d)
    R_full[:r, :r] = R
    rotation = matmul(matmul(U_full, R_full), transpose(U_full))
    return matmul(rotation, dec.weights())

"""Cayley parameterisation of special orthogonal matrices.

A vector ``q`` of ``r(r-1)/2`` free values fills the strict upper triangle of
a skew-symmetric ``Q`` (row-major); the orthogonal matrix is
``R = (I - Q)(I + Q)^{-1}``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, NumericalFailure, ShapeError
from .tensor import as_matrix, frobenius_norm, matmul

SOLVE_RESIDUAL_TOL = 1e-8


def n_params(r):
    return r * (r - 1) // 2


@dataclass(frozen=True, eq=False)
class CayleyParams:
    r: int
    q: np.ndarray

    def __post_init__(self):
        if self.r < 1:
            raise InvalidInput(f"r must be positive, got {self.r}")
        q = np.array(self.q, dtype=np.float64).reshape(-1)
        if q.shape[0] != n_params(self.r):
            raise ShapeError(f"expected {n_params(self.r)} parameters for r={self.r}, got {q.shape[0]}")
        if not np.isfinite(q).all():
            raise InvalidInput("Cayley parameters must be finite")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls, r):
        return cls(r, np.zeros(n_params(r)))

    @classmethod
    def random(cls, r, rng, scale=1.0):
        return cls(r, scale * rng.standard_normal(n_params(r)))

    def __neg__(self):
        return CayleyParams(self.r, -self.q)


def materialize_Q(p):
    Q = np.zeros((p.r, p.r))
    iu = np.triu_indices(p.r, 1)
    Q[iu] = p.q
    Q[(iu[1], iu[0])] = -p.q
    return Q


def _solve(lhs, rhs):
    """Solve ``lhs @ X = rhs``; fall back to least squares when the direct
    solve fails or leaves a residual above ``SOLVE_RESIDUAL_TOL``."""
    scale = max(1.0, frobenius_norm(rhs))
    try:
        x = np.linalg.solve(lhs, rhs)
        if frobenius_norm(lhs @ x - rhs) <= SOLVE_RESIDUAL_TOL * scale:
            return x
    except np.linalg.LinAlgError:
        pass
    x = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    residual = frobenius_norm(lhs @ x - rhs)
    if residual > SOLVE_RESIDUAL_TOL * scale:
        raise NumericalFailure(f"Cayley solve residual {residual:.3e} exceeds tolerance")
    return x


def cayley_forward(p):
    """Orthogonal ``R`` with ``det(R) = +1``; ``R = I`` when ``q = 0``."""
    Q = materialize_Q(p)
    eye = np.eye(p.r)
    # (I - Q) and (I + Q)^{-1} commute, so R = (I + Q)^{-1} (I - Q).
    return _solve(eye + Q, eye - Q)


def cayley_backward(p, grad_R):
    """Gradient of a scalar loss w.r.t. ``q`` given ``dL/dR``.

    With ``dR = -(I + R) dQ (I + Q)^{-1}`` the full-matrix gradient is
    ``M = -(I + R)^T G (I + Q)^{-T}``; each free entry ``q_ij`` (i < j)
    enters ``Q`` at (i, j) and, negated, at (j, i).
    """
    G = as_matrix(grad_R, "grad_R")
    if G.shape != (p.r, p.r):
        raise ShapeError(f"grad_R must be {p.r}x{p.r}, got {G.shape}")
    Q = materialize_Q(p)
    eye = np.eye(p.r)
    R = cayley_forward(p)
    # (I + Q)^{-T} = (I - Q)^{-1}, so M (I - Q) = -(I + R)^T G, i.e.
    # (I + Q) M^T = -G^T (I + R).
    Mt = _solve(eye + Q, -matmul(G.T, eye + R))
    M = Mt.T
    iu = np.triu_indices(p.r, 1)
    return M[iu] - M[(iu[1], iu[0])]

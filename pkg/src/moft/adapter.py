"""Trainable adapters over a frozen weight matrix.

:class:`MoftAdapter` is the rotation-in-subspace layer

    h = (A diag(alpha) R diag(beta) B + W_res)^T x,   R = cayley(q)

evaluated on row-major batches ``X`` (batch×d) as ``X @ W``. The LoRA and
LoRA-XS adapters are minimal comparators sharing the same interface:
``params()``, ``set_params()``, ``forward()``, ``backward()``,
``apply_update()`` and ``merge()``.
"""
from enum import Enum

import numpy as np

from .cayley import CayleyParams, cayley_backward, cayley_forward, n_params
from .errors import InvalidInput, ShapeError
from .subspace import decompose
from .tensor import as_matrix, matmul, svd_exact, transpose


def _check_batch(X, d, name="X"):
    X = as_matrix(X, name)
    if X.shape[1] != d:
        raise ShapeError(f"{name} has {X.shape[1]} features, adapter expects {d}")
    return X


def _check_grad(G, batch, n):
    G = as_matrix(G, "grad_h")
    if G.shape != (batch, n):
        raise ShapeError(f"grad_h must be {batch}x{n}, got {G.shape}")
    return G


def mse_loss(H, Y):
    """Mean squared error over all entries and its gradient w.r.t. ``H``."""
    diff = H - Y
    loss = float(np.einsum("ij,ij->", diff, diff)) / diff.size
    return loss, (2.0 / diff.size) * diff


class MoftAdapter:
    def __init__(self, dec, cayley=None, alpha=None, beta=None, scaling_enabled=True):
        r = dec.r
        self.dec = dec
        self.scaling_enabled = bool(scaling_enabled)
        self.cayley = cayley if cayley is not None else CayleyParams.identity(r)
        if self.cayley.r != r:
            raise ShapeError(f"Cayley parameters are for r={self.cayley.r}, decomposition has r={r}")
        self.alpha = np.ones(r) if alpha is None else np.array(alpha, dtype=np.float64)
        self.beta = np.ones(r) if beta is None else np.array(beta, dtype=np.float64)
        for name, vec in (("alpha", self.alpha), ("beta", self.beta)):
            if vec.shape != (r,):
                raise ShapeError(f"{name} must have length {r}, got shape {vec.shape}")
        if not self.scaling_enabled and not (np.all(self.alpha == 1.0) and np.all(self.beta == 1.0)):
            raise InvalidInput("alpha and beta must be all ones when scaling is disabled")

    @classmethod
    def from_weights(cls, W_pre, r, scaling_enabled=True, **decompose_kw):
        return cls(decompose(W_pre, r, **decompose_kw), scaling_enabled=scaling_enabled)

    @property
    def r(self):
        return self.dec.r

    def num_trainable(self):
        return n_params(self.r) + (2 * self.r if self.scaling_enabled else 0)

    def rotation(self):
        return cayley_forward(self.cayley)

    def params(self):
        out = {"q": self.cayley.q.copy()}
        if self.scaling_enabled:
            out["alpha"] = self.alpha.copy()
            out["beta"] = self.beta.copy()
        return out

    def set_params(self, params):
        if "q" in params:
            self.cayley = CayleyParams(self.r, params["q"])
        if self.scaling_enabled:
            if "alpha" in params:
                self.alpha = np.array(params["alpha"], dtype=np.float64)
            if "beta" in params:
                self.beta = np.array(params["beta"], dtype=np.float64)

    def copy(self):
        return MoftAdapter(self.dec, self.cayley, self.alpha.copy(), self.beta.copy(), self.scaling_enabled)

    def forward(self, X):
        # Never forms the d×n update: X W_res + (((X A) * alpha) R * beta) B.
        X = _check_batch(X, self.dec.d)
        z = matmul(X, self.dec.A) * self.alpha
        z = matmul(z, self.rotation()) * self.beta
        return matmul(z, self.dec.B) + matmul(X, self.dec.W_res)

    def backward(self, X, grad_h):
        """Gradients of the loss w.r.t. ``q`` (and ``alpha``, ``beta`` when
        scaling is enabled), summed over the batch."""
        X = _check_batch(X, self.dec.d)
        G = _check_grad(grad_h, X.shape[0], self.dec.n)
        R = self.rotation()
        z = matmul(X, self.dec.A)              # batch×r, projection onto the subspace
        za = z * self.alpha
        y1 = matmul(za, R)
        dy2 = matmul(G, transpose(self.dec.B))  # batch×r
        dy1 = dy2 * self.beta
        grad_R = matmul(transpose(za), dy1)     # sum_b (alpha ⊙ A^T x_b)(beta ⊙ B g_b)^T
        grads = {"q": cayley_backward(self.cayley, grad_R)}
        if self.scaling_enabled:
            grads["beta"] = np.einsum("ij,ij->j", y1, dy2)
            grads["alpha"] = np.einsum("ij,ij->j", z, matmul(dy1, transpose(R)))
        return grads

    def apply_update(self, grads, lr):
        self.cayley = CayleyParams(self.r, self.cayley.q - lr * grads["q"])
        if self.scaling_enabled:
            self.alpha = self.alpha - lr * grads["alpha"]
            self.beta = self.beta - lr * grads["beta"]

    def merge(self):
        """Dense ``A diag(alpha) R diag(beta) B + W_res``."""
        core = (self.alpha[:, None] * self.rotation()) * self.beta
        return matmul(matmul(self.dec.A, core), self.dec.B) + self.dec.W_res


class LoraAdapter:
    """``W = W_pre + A B`` with Gaussian ``A`` (d×r) and zero ``B`` (r×n)."""

    def __init__(self, W_pre, r, rng=None, init_scale=None):
        self.W_pre = as_matrix(W_pre, "W_pre")
        d, n = self.W_pre.shape
        if not 1 <= r <= min(d, n):
            raise InvalidInput(f"LoRA rank must be in [1, {min(d, n)}], got {r}")
        rng = np.random.default_rng(rng)
        scale = 1.0 / np.sqrt(d) if init_scale is None else init_scale
        self.r = r
        self.A = scale * rng.standard_normal((d, r))
        self.B = np.zeros((r, n))

    def num_trainable(self):
        return self.A.size + self.B.size

    def params(self):
        return {"A": self.A.copy(), "B": self.B.copy()}

    def set_params(self, params):
        self.A = np.array(params.get("A", self.A), dtype=np.float64)
        self.B = np.array(params.get("B", self.B), dtype=np.float64)

    def forward(self, X):
        X = _check_batch(X, self.W_pre.shape[0])
        return matmul(X, self.W_pre) + matmul(matmul(X, self.A), self.B)

    def backward(self, X, grad_h):
        X = _check_batch(X, self.W_pre.shape[0])
        G = _check_grad(grad_h, X.shape[0], self.W_pre.shape[1])
        return {
            "A": matmul(transpose(X), matmul(G, transpose(self.B))),
            "B": matmul(transpose(matmul(X, self.A)), G),
        }

    def apply_update(self, grads, lr):
        self.A = self.A - lr * grads["A"]
        self.B = self.B - lr * grads["B"]

    def merge(self):
        return self.W_pre + matmul(self.A, self.B)


class LoraXsAdapter:
    """``W = W_pre + A M B`` with frozen ``A = U_r S_r``, ``B = V_r^T`` and a
    trainable r×r ``M`` starting at zero."""

    def __init__(self, W_pre, r):
        self.W_pre = as_matrix(W_pre, "W_pre")
        d, n = self.W_pre.shape
        if not 1 <= r <= min(d, n):
            raise InvalidInput(f"LoRA-XS rank must be in [1, {min(d, n)}], got {r}")
        svd = svd_exact(self.W_pre)
        self.r = r
        self.A = svd.U[:, :r] * svd.S[:r]
        self.B = transpose(svd.V[:, :r])
        self.M = np.zeros((r, r))

    def num_trainable(self):
        return self.M.size

    def params(self):
        return {"M": self.M.copy()}

    def set_params(self, params):
        self.M = np.array(params.get("M", self.M), dtype=np.float64)

    def forward(self, X):
        X = _check_batch(X, self.W_pre.shape[0])
        return matmul(X, self.W_pre) + matmul(matmul(matmul(X, self.A), self.M), self.B)

    def backward(self, X, grad_h):
        X = _check_batch(X, self.W_pre.shape[0])
        G = _check_grad(grad_h, X.shape[0], self.W_pre.shape[1])
        return {"M": matmul(transpose(matmul(X, self.A)), matmul(G, transpose(self.B)))}

    def apply_update(self, grads, lr):
        self.M = self.M - lr * grads["M"]

    def merge(self):
        return self.W_pre + matmul(matmul(self.A, self.M), self.B)


# --------------------------------------------------------------------------
# Trainable-parameter counts per linear layer
# --------------------------------------------------------------------------

class Method(str, Enum):
    MOFT = "moft"
    LORA = "lora"
    LORA_XS = "lora-xs"
    DORA = "dora"
    VERA = "vera"
    OFT = "oft"
    BOFT = "boft"
    SVFT = "svft"


def _need(dims, *keys):
    missing = [k for k in keys if dims.get(k) is None]
    if missing:
        raise InvalidInput(f"missing dimension(s): {', '.join(missing)}")
    vals = [dims[k] for k in keys]
    for k, v in zip(keys, vals):
        if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
            raise InvalidInput(f"dimension {k} must be a positive integer, got {v!r}")
    return [int(v) for v in vals]


def _exact_div(a, b, what):
    if a % b:
        raise InvalidInput(f"{what}: {a} is not divisible by {b}")
    return a // b


def count_params(method, dims, module_count=1, scaling=True):
    """Trainable parameters of ``module_count`` adapted linear layers.

    ``dims`` may hold ``d``, ``n``, ``r``, ``m`` (BOFT factors), ``b`` (BOFT
    block size), ``k`` (SVFT off-diagonals) and ``d_min`` (defaults to
    ``min(d, n)``).
    """
    try:
        method = Method(method)
    except ValueError:
        raise InvalidInput(f"unknown method {method!r}") from None
    if isinstance(module_count, bool) or not isinstance(module_count, (int, np.integer)) or module_count < 1:
        raise InvalidInput(f"module_count must be a positive integer, got {module_count!r}")
    dims = dict(dims)
    if method is Method.MOFT:
        (r,) = _need(dims, "r")
        per = r * (r - 1) // 2 + (2 * r if scaling else 0)
    elif method is Method.LORA:
        d, n, r = _need(dims, "d", "n", "r")
        per = d * r + r * n
    elif method is Method.LORA_XS:
        (r,) = _need(dims, "r")
        per = r * r
    elif method is Method.DORA:
        d, n, r = _need(dims, "d", "n", "r")
        per = d * r + r * n + n
    elif method is Method.VERA:
        n, r = _need(dims, "n", "r")
        per = r + n
    elif method is Method.OFT:
        d, n, r = _need(dims, "d", "n", "r")
        block = _exact_div(d, r, "OFT block size d/r")
        per = r * block * block + n
    elif method is Method.BOFT:
        d, n, m, b = _need(dims, "d", "n", "m", "b")
        per = m * _exact_div(d, b, "BOFT blocks d/b") * b * b + n
    else:
        if dims.get("d_min") is None and dims.get("d") is not None and dims.get("n") is not None:
            dims["d_min"] = min(dims["d"], dims["n"])
        d_min, k = _need(dims, "d_min", "k")
        if k > d_min:
            raise InvalidInput(f"SVFT off-diagonals k={k} exceed d_min={d_min}")
        per = d_min * k + (d_min - k) * (k + 1)
    return per * int(module_count)

"""Synthetic planted-transform tasks, the SGD training loop, finite-difference
gradient checks, and baseline comparisons."""
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .adapter import LoraAdapter, LoraXsAdapter, MoftAdapter, count_params, mse_loss
from .cayley import CayleyParams, cayley_forward
from .errors import Diverged, InvalidInput
from .subspace import decompose
from .tensor import frobenius_norm, matmul, transpose

TASK_KINDS = ("rotation", "additive", "zero")
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True, eq=False)
class PlantedTask:
    W_pre: np.ndarray
    W_target: np.ndarray
    r_star: int
    R_star: np.ndarray
    alpha_star: Optional[np.ndarray]
    beta_star: Optional[np.ndarray]
    X_train: np.ndarray
    Y_train: np.ndarray
    X_test: np.ndarray
    Y_test: np.ndarray
    kind: str = "rotation"
    seed: int = 0

    @property
    def d(self):
        return self.W_pre.shape[0]

    @property
    def n(self):
        return self.W_pre.shape[1]

    def target_variance(self):
        return float(np.var(self.Y_test))


def _positive_int(name, v):
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
        raise InvalidInput(f"{name} must be a positive integer, got {v!r}")
    return int(v)


def generate_task(d, n, r_star, scaling=False, seed=0, kind="rotation",
                  n_train=256, n_test=128, rotation_scale=0.5, scaling_spread=0.2):
    """Draw a task whose targets ``Y = X @ W_target`` are exactly realisable.

    ``rotation``: ``W_target = A diag(alpha*) R* diag(beta*) B + W_res`` on the
    rank-``r_star`` split of a Gaussian ``W_pre`` (scalings all ones unless
    ``scaling``). ``additive``: ``W_target = W_pre + P @ Q`` with a rank-
    ``r_star`` update. ``zero``: ``W_target = W_pre``.
    """
    d, n, r_star = (_positive_int(k, v) for k, v in (("d", d), ("n", n), ("r_star", r_star)))
    n_train, n_test = _positive_int("n_train", n_train), _positive_int("n_test", n_test)
    if r_star > min(d, n):
        raise InvalidInput(f"r_star={r_star} exceeds min(d, n)={min(d, n)}")
    if kind not in TASK_KINDS:
        raise InvalidInput(f"unknown task kind {kind!r}")
    if kind == "rotation" and r_star < 2 and not scaling:
        raise InvalidInput("a rank-1 rotation task without scaling has no non-identity target")

    rng = np.random.default_rng(seed)
    W_pre = rng.standard_normal((d, n))
    R_star = np.eye(r_star)
    alpha_star = beta_star = None
    if kind == "rotation":
        dec = decompose(W_pre, r_star)
        if r_star >= 2:
            while True:
                R_star = cayley_forward(CayleyParams.random(r_star, rng, rotation_scale))
                if frobenius_norm(R_star - np.eye(r_star)) > 0.1:
                    break
        if scaling:
            alpha_star = np.exp(scaling_spread * rng.standard_normal(r_star))
            beta_star = np.exp(scaling_spread * rng.standard_normal(r_star))
        core = R_star
        if scaling:
            core = (alpha_star[:, None] * R_star) * beta_star
        W_target = matmul(matmul(dec.A, core), dec.B) + dec.W_res
    elif kind == "additive":
        P = rng.standard_normal((d, r_star))
        Q = rng.standard_normal((r_star, n))
        delta = matmul(P, Q)
        delta *= 0.3 * frobenius_norm(W_pre) / frobenius_norm(delta)
        W_target = W_pre + delta
    else:
        W_target = W_pre.copy()

    X_train = rng.standard_normal((n_train, d))
    X_test = rng.standard_normal((n_test, d))
    return PlantedTask(
        W_pre=W_pre, W_target=W_target, r_star=r_star, R_star=R_star,
        alpha_star=alpha_star, beta_star=beta_star,
        X_train=X_train, Y_train=matmul(X_train, W_target),
        X_test=X_test, Y_test=matmul(X_test, W_target),
        kind=kind, seed=seed,
    )


def pl_decay_lr(k, mu=1.0):
    """Step size ``(2k + 1) / (2 mu (k + 1)^2)`` for zero-based step ``k``."""
    return (2 * k + 1) / (2.0 * mu * (k + 1) ** 2)


@dataclass(frozen=True)
class TrainConfig:
    rank: int
    epochs: int = 100
    lr: float = 0.01
    schedule: str = "constant"
    mu: float = 1.0
    batch_size: int = 32
    seed: int = 0
    scaling_enabled: bool = False
    loss: str = "mse"

    def __post_init__(self):
        _positive_int("rank", self.rank)
        _positive_int("batch_size", self.batch_size)
        if isinstance(self.epochs, bool) or not isinstance(self.epochs, int) or self.epochs < 0:
            raise InvalidInput(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if self.schedule not in ("constant", "pl_decay"):
            raise InvalidInput(f"unknown lr schedule {self.schedule!r}")
        if self.schedule == "constant" and not self.lr > 0:
            raise InvalidInput("lr must be positive")
        if self.schedule == "pl_decay" and not self.mu > 0:
            raise InvalidInput("mu must be positive")
        if self.loss != "mse":
            raise InvalidInput("only the mse loss is supported")

    def step_size(self, k):
        return self.lr if self.schedule == "constant" else pl_decay_lr(k, self.mu)


@dataclass(frozen=True)
class HistoryEntry:
    step: int
    epoch: int
    train_loss: float
    test_loss: float
    r_orth_residual: float


@dataclass
class TrainResult:
    adapter: object
    history: list = field(default_factory=list)

    @property
    def final(self):
        return self.history[-1]


def evaluate(adapter, X, Y):
    return mse_loss(adapter.forward(X), Y)[0]


def _orth_residual(adapter):
    if not isinstance(adapter, MoftAdapter):
        return 0.0
    R = adapter.rotation()
    return frobenius_norm(matmul(transpose(R), R) - np.eye(adapter.r))


def train_adapter(adapter, task, cfg):
    """Mini-batch SGD on any adapter exposing forward/backward/apply_update.

    One history entry is logged before training (step 0) and after every
    update, with full-set train and test losses.
    """
    rng = np.random.default_rng(cfg.seed)
    X, Y = task.X_train, task.Y_train
    n_rows = X.shape[0]
    init_loss = evaluate(adapter, X, Y)
    history = [HistoryEntry(0, 0, init_loss, evaluate(adapter, task.X_test, task.Y_test), _orth_residual(adapter))]
    limit = DIVERGENCE_FACTOR * init_loss if init_loss > 0 else math.inf
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n_rows)
        for start in range(0, n_rows, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb, yb = X[idx], Y[idx]
            _, grad_h = mse_loss(adapter.forward(xb), yb)
            adapter.apply_update(adapter.backward(xb, grad_h), cfg.step_size(step))
            step += 1
            train_loss = evaluate(adapter, X, Y)
            if not math.isfinite(train_loss) or train_loss > limit:
                raise Diverged(step, train_loss)
            history.append(HistoryEntry(step, epoch, train_loss,
                                        evaluate(adapter, task.X_test, task.Y_test),
                                        _orth_residual(adapter)))
    return TrainResult(adapter, history)


def train(task, cfg):
    """Fit a fresh rank-``cfg.rank`` MOFT adapter on ``task.W_pre``."""
    dec = decompose(task.W_pre, cfg.rank)
    adapter = MoftAdapter(dec, scaling_enabled=cfg.scaling_enabled)
    return train_adapter(adapter, task, cfg)


# --------------------------------------------------------------------------
# Finite-difference gradient check
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: dict
    tol: float
    passes: bool

    def to_dict(self):
        return {"max_rel_error": dict(self.max_rel_error), "tol": self.tol, "passes": self.passes}


def finite_difference(loss_fn, params, name, h=1e-6):
    """Central differences of ``loss_fn(params)`` over every entry of ``params[name]``."""
    base = params[name]
    out = np.zeros(base.shape)
    for idx in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[idx] += h
        minus[idx] -= h
        out[idx] = (loss_fn({**params, name: plus}) - loss_fn({**params, name: minus})) / (2 * h)
    return out


def relative_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.abs(analytic), floor)))


def grad_check(adapter, X, Y, tol=1e-5, h=1e-6):
    """Compare analytic MSE gradients with central differences per parameter group."""
    saved = adapter.params()
    _, grad_h = mse_loss(adapter.forward(X), Y)
    analytic = adapter.backward(X, grad_h)

    def loss_fn(p):
        adapter.set_params(p)
        return mse_loss(adapter.forward(X), Y)[0]

    errors = {}
    try:
        for name in saved:
            numeric = finite_difference(loss_fn, saved, name, h)
            errors[name] = relative_error(analytic[name], numeric)
    finally:
        adapter.set_params(saved)
    return GradCheckReport(errors, tol, all(e < tol for e in errors.values()))


# --------------------------------------------------------------------------
# Baselines at matched parameter budgets
# --------------------------------------------------------------------------

def matched_ranks(d, n, moft_rank, scaling=False):
    """LoRA and LoRA-XS ranks whose trainable counts best match MOFT's."""
    budget = count_params("moft", {"r": moft_rank}, scaling=scaling)
    kmax = min(d, n)
    lora_r = min(kmax, max(1, round(budget / (d + n))))
    xs_r = min(kmax, max(1, round(math.sqrt(budget))))
    return {"moft": moft_rank, "lora": lora_r, "lora_xs": xs_r}


def compare_baselines(task, cfgs, match_budget=True):
    """Train MOFT, LoRA and LoRA-XS on the same task.

    ``cfgs`` maps ``"moft"`` (required), ``"lora"`` and ``"lora_xs"`` to
    :class:`TrainConfig`. A baseline without its own config reuses the MOFT
    one, with its rank chosen from the MOFT parameter count when
    ``match_budget`` is set; explicitly configured baselines keep their rank.
    Returns one row per method.
    """
    if "moft" not in cfgs:
        raise InvalidInput("compare_baselines needs a 'moft' config")
    moft_cfg = cfgs["moft"]
    ranks = matched_ranks(task.d, task.n, moft_cfg.rank, moft_cfg.scaling_enabled)
    configs = {"moft": moft_cfg}
    for m in ("lora", "lora_xs"):
        if m in cfgs:
            configs[m] = cfgs[m]
        else:
            configs[m] = replace(moft_cfg, rank=ranks[m]) if match_budget else moft_cfg
    var_y = task.target_variance()
    rows = []
    for method, cfg in configs.items():
        if method == "moft":
            adapter = MoftAdapter(decompose(task.W_pre, cfg.rank), scaling_enabled=cfg.scaling_enabled)
        elif method == "lora":
            adapter = LoraAdapter(task.W_pre, cfg.rank, rng=cfg.seed)
        else:
            adapter = LoraXsAdapter(task.W_pre, cfg.rank)
        result = train_adapter(adapter, task, cfg)
        test_loss = result.final.test_loss
        rows.append({
            "method": method,
            "rank": cfg.rank,
            "params": adapter.num_trainable(),
            "final_test_loss": test_loss,
            "relative_test_loss": test_loss / var_y if var_y > 0 else test_loss,
        })
    return rows

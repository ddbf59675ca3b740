"""Closed-form activation memory of one transformer layer per fine-tuning method.

All quantities are exact integers. Coefficients are in bytes for 32-bit
activations; other activation widths scale every component linearly
(rounded up per component).

Monomials: ``bsh`` = b*s*h, ``abs2`` = a*b*s^2, ``bsr`` = b*s*r,
``mbsh`` = m*b*s*h, ``bs`` = b*s.
"""
from dataclasses import dataclass, field
from typing import Optional

from .errors import InvalidInput, Overflow

INT64_MAX = 2 ** 63 - 1

# Baseline layer (full fine-tuning), grouped by where the activations live.
BASE_COMPONENTS = {
    # QKV shared input 4bsh, first matmul 8bsh, second matmul 4abs^2 + 4bsh,
    # output projection input 4bsh
    "attention": {"bsh": 20, "abs2": 4},
    "softmax": {"abs2": 4},
    # attention-probability mask abs^2, attention and FFN output masks bsh each
    "dropout_masks": {"abs2": 1, "bsh": 2},
    # FFN1 input 4bsh, GELU 16bsh, FFN2 input 16bsh
    "ffn": {"bsh": 36},
    "layernorm": {"bsh": 8},
}

# Change relative to the baseline, summed over the six linear layers.
ADAPTER_DELTA = {
    "fft": {},
    "lora": {"bsr": 24},
    "dora": {"bsr": 24, "bsh": 36},
    "vera": {"bsh": 8, "bsr": 16},
    "oft": {"bsh": 36},
    "boft": {"mbsh": 36},
    "goft": {"bsh": 108, "bs": -48},
    "svft": {"bsh": -4},
    "lora-xs": {"bsh": -28, "bsr": 24},
    "moft": {"bsh": -28, "bsr": 72},
}

METHODS = tuple(ADAPTER_DELTA)
NEEDS_RANK = frozenset({"lora", "dora", "vera", "lora-xs", "moft"})
NEEDS_M = frozenset({"boft"})

_MONOMIAL_ORDER = ("mbsh", "bsh", "bsr", "abs2", "bs")
_MONOMIAL_TEXT = {"mbsh": "mbsh", "bsh": "bsh", "bsr": "bsr", "abs2": "abs²", "bs": "bs"}


@dataclass(frozen=True)
class LayerConfig:
    b: int
    s: int
    h: int
    a: int
    r: Optional[int] = None
    m: Optional[int] = None
    bytes_per_act: int = 4

    def __post_init__(self):
        for name in ("b", "s", "h", "a", "r", "m"):
            v = getattr(self, name)
            if v is None and name in ("r", "m"):
                continue
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise InvalidInput(f"{name} must be a positive integer, got {v!r}")
        if self.bytes_per_act not in (2, 4):
            raise InvalidInput(f"bytes_per_act must be 2 or 4, got {self.bytes_per_act!r}")

    @classmethod
    def from_dict(cls, d):
        keys = ("b", "s", "h", "a", "r", "m", "bytes_per_act")
        unknown = set(d) - set(keys)
        if unknown:
            raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**{k: d[k] for k in keys if k in d})
        except TypeError as exc:
            raise InvalidInput(str(exc)) from None

    def to_dict(self):
        return {"b": self.b, "s": self.s, "h": self.h, "a": self.a, "r": self.r,
                "m": self.m, "bytes_per_act": self.bytes_per_act}


@dataclass(frozen=True)
class MemoryEstimate:
    method: str
    total_bytes: int
    breakdown: dict = field(default_factory=dict)

    def to_dict(self):
        return {"method": self.method, "total_bytes": self.total_bytes, "breakdown": dict(self.breakdown)}


def _monomials(cfg):
    b, s, h, a = cfg.b, cfg.s, cfg.h, cfg.a
    vals = {"bsh": b * s * h, "abs2": a * b * s * s, "bs": b * s}
    if cfg.r is not None:
        vals["bsr"] = b * s * cfg.r
    if cfg.m is not None:
        vals["mbsh"] = cfg.m * b * s * h
    return vals


def _evaluate(coeffs, mono, bytes_per_act):
    total = sum(c * mono[k] for k, c in coeffs.items())
    if bytes_per_act != 4:
        total = -((-total * bytes_per_act) // 4)
    if abs(total) > INT64_MAX:
        raise Overflow(f"activation estimate {total} exceeds 64-bit range")
    return total


def formula(method):
    """Human-readable total, e.g. ``38bsh+72bsr+9abs²`` for moft."""
    method = _check_method(method)
    coeffs = {}
    for comp in list(BASE_COMPONENTS.values()) + [ADAPTER_DELTA[method]]:
        for k, c in comp.items():
            coeffs[k] = coeffs.get(k, 0) + c
    parts = []
    for k in _MONOMIAL_ORDER:
        c = coeffs.get(k, 0)
        if c:
            parts.append(f"{'+' if c > 0 and parts else ''}{'-' if c < 0 else ''}{abs(c)}{_MONOMIAL_TEXT[k]}")
    return "".join(parts)


def _check_method(method):
    method = str(method).lower()
    if method not in ADAPTER_DELTA:
        raise InvalidInput(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    return method


def act_base(cfg):
    """``66bsh + 9abs²`` bytes for one layer under full fine-tuning."""
    return act_method(cfg, "fft").total_bytes


def act_method(cfg, method):
    method = _check_method(method)
    if method in NEEDS_RANK and cfg.r is None:
        raise InvalidInput(f"method {method} requires the adapter rank r")
    if method in NEEDS_M and cfg.m is None:
        raise InvalidInput(f"method {method} requires the sparse-factor count m")
    mono = _monomials(cfg)
    breakdown = {name: _evaluate(c, mono, cfg.bytes_per_act) for name, c in BASE_COMPONENTS.items()}
    breakdown["adapter_delta"] = _evaluate(ADAPTER_DELTA[method], mono, cfg.bytes_per_act)
    total = sum(breakdown.values())
    if abs(total) > INT64_MAX:
        raise Overflow(f"activation estimate {total} exceeds 64-bit range")
    return MemoryEstimate(method, total, breakdown)


@dataclass(frozen=True)
class CompareRow:
    config_index: int
    config: LayerConfig
    estimate: MemoryEstimate
    ratio_vs_fft: float


def compare(cfgs, methods):
    """Estimates for every (config, method) pair, configs outermost."""
    cfgs, methods = list(cfgs), [_check_method(m) for m in methods]
    if not cfgs or not methods:
        raise InvalidInput("compare needs at least one config and one method")
    rows = []
    for i, cfg in enumerate(cfgs):
        fft = act_method(cfg, "fft").total_bytes
        for method in methods:
            est = act_method(cfg, method)
            rows.append(CompareRow(i, cfg, est, est.total_bytes / fft))
    return rows

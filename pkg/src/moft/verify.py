"""Property suite run by ``moft verify`` on a weight matrix.

Each property reports its measured residual, its tolerance and whether it
passes. Properties flagged ``informational`` never fail the suite.
"""
import numpy as np

from .adapter import MoftAdapter
from .cayley import CayleyParams, cayley_forward
from .geometry import check_preservation, has_nondegenerate_pair, hyperspherical_energy
from .subspace import Variant, decompose, embed_full_space, reconstruct
from .tensor import as_matrix, frobenius_norm, matmul, svd_exact, transpose
from .trainer import grad_check

TOL_ORTH = 1e-10
TOL_ANGLE = 1e-8
TOL_NECESSITY = 1e-4
TOL_EQUIV = 1e-9
TOL_GRAD = 1e-5
GRAD_RANK_CAP = 8


def _entry(measured, tol, passes, **extra):
    out = {"measured": float(measured), "tol": tol, "passes": bool(passes)}
    out.update(extra)
    return out


def _rel(a, b):
    return frobenius_norm(a - b) / max(frobenius_norm(b), 1e-300)


def _svd_orthogonality(W):
    svd = svd_exact(W)
    k = svd.S.shape[0]
    eye = np.eye(k)
    res = max(frobenius_norm(matmul(transpose(svd.U), svd.U) - eye),
              frobenius_norm(matmul(transpose(svd.V), svd.V) - eye))
    return _entry(res, TOL_ORTH * max(1, k), res < TOL_ORTH * max(1, k),
                  reconstruction_error=_rel(svd.reconstruct(), W))


def _cayley_orthogonality(rank, rngs):
    worst = 0.0
    for i, rng in enumerate(rngs):
        scale = 50.0 if i % 2 else 1.0
        R = cayley_forward(CayleyParams.random(rank, rng, scale))
        worst = max(worst, frobenius_norm(matmul(transpose(R), R) - np.eye(rank)))
    return _entry(worst, TOL_ORTH, worst < TOL_ORTH)


def _sufficiency(dec, rngs):
    worst = 0.0
    for rng in rngs:
        R = cayley_forward(CayleyParams.random(dec.r, rng))
        worst = max(worst, check_preservation(dec, R, tol=TOL_ANGLE).max_angle_delta)
    return _entry(worst, TOL_ANGLE, worst < TOL_ANGLE)


def _necessity(W, rank, rngs):
    """PISSA split: a random rotation should move some angle by > 1e-4."""
    if rank < 2:
        return _entry(0.0, TOL_NECESSITY, True, informational=True, expected_fail=True,
                      note="rank 1 admits only R = I; not applicable")
    dec = decompose(W, rank, Variant.PISSA)
    if not has_nondegenerate_pair(dec):
        return _entry(0.0, TOL_NECESSITY, True, informational=True, expected_fail=True,
                      note="no pair with b_i^T G b_j != 0; not applicable")
    smallest = np.inf
    for rng in rngs:
        R = cayley_forward(CayleyParams.random(rank, rng))
        smallest = min(smallest, check_preservation(dec, R, tol=TOL_ANGLE).max_angle_delta)
    found = smallest > TOL_NECESSITY
    return _entry(smallest, TOL_NECESSITY, found, informational=True, expected_fail=True,
                  note="minimum over trials of the largest angle change under the PISSA split")


def _full_space(dec, rngs):
    worst = 0.0
    for rng in rngs:
        R = cayley_forward(CayleyParams.random(dec.r, rng))
        worst = max(worst, _rel(embed_full_space(dec, R), reconstruct(dec, R)))
    return _entry(worst, TOL_EQUIV, worst < TOL_EQUIV)


def _hse_invariance(dec, rngs):
    base = hyperspherical_energy(dec.principal())
    worst = 0.0
    for rng in rngs:
        R = cayley_forward(CayleyParams.random(dec.r, rng))
        rotated = hyperspherical_energy(matmul(matmul(dec.A, R), dec.B))
        worst = max(worst, abs(rotated - base) / base if base else abs(rotated))
    return _entry(worst, TOL_EQUIV, worst < TOL_EQUIV)


def _gradient(W, rank, rng):
    r = min(rank, GRAD_RANK_CAP)
    adapter = MoftAdapter(decompose(W, r), scaling_enabled=True)
    adapter.set_params({
        "q": 0.3 * rng.standard_normal(adapter.cayley.q.shape[0]),
        "alpha": 1.0 + 0.2 * rng.standard_normal(r),
        "beta": 1.0 + 0.2 * rng.standard_normal(r),
    })
    X = rng.standard_normal((8, W.shape[0]))
    Y = rng.standard_normal((8, W.shape[1]))
    report = grad_check(adapter, X, Y, tol=TOL_GRAD)
    worst = max(report.max_rel_error.values())
    return _entry(worst, TOL_GRAD, report.passes, rank=r, groups=report.max_rel_error)


def run_suite(W, rank, trials=10, seed=0, variant=Variant.MOFT):
    """Evaluate every property and return a JSON-ready report.

    ``variant`` selects the split used by the preservation-based checks; with
    ``pissa`` the sufficiency check is expected to fail and is reported as
    informational.
    """
    W = as_matrix(W, "W")
    variant = Variant(variant)
    if trials < 1:
        raise ValueError("trials must be positive")
    children = np.random.SeedSequence(seed).spawn(6)

    def rngs(i):
        return [np.random.default_rng(s) for s in children[i].spawn(trials)]

    dec = decompose(W, rank, variant)
    moft_dec = dec if variant is Variant.MOFT else decompose(W, rank, Variant.MOFT)
    props = {
        "svd_orthogonality": _svd_orthogonality(W),
        "cayley_orthogonality": _cayley_orthogonality(rank, rngs(0)),
        "angle_preservation": _sufficiency(dec, rngs(1)),
        "angle_necessity": _necessity(W, rank, rngs(2)),
        "full_space_equivalence": _full_space(moft_dec, rngs(3)),
        "hse_invariance": _hse_invariance(moft_dec, rngs(4)),
        "gradient_check": _gradient(W, rank, np.random.default_rng(children[5])),
    }
    if variant is Variant.PISSA:
        props["angle_preservation"].update(informational=True, expected_fail=True)
    failing = [k for k, v in props.items() if not v["passes"] and not v.get("informational")]
    return {
        "d": W.shape[0],
        "n": W.shape[1],
        "rank": rank,
        "variant": variant.value,
        "trials": trials,
        "seed": seed,
        "properties": props,
        "failing": failing,
        "passes": not failing,
    }

import warnings

import numpy as np
import pytest

from moft.errors import InvalidBasis, InvalidInput, InvalidRank, RankDeficientWarning, ShapeError
from moft.subspace import SvdMode, Variant, decompose, embed_full_space, randomized, reconstruct
from conftest import random_orthogonal, rel_fro


@pytest.fixture
def W():
    return np.random.default_rng(0).standard_normal((12, 9))


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("r", [1, 4, 9])
def test_identity_rotation_reconstructs(W, variant, r):
    dec = decompose(W, r, variant)
    assert dec.A.shape == (12, r) and dec.B.shape == (r, 9) and dec.W_res.shape == W.shape
    assert rel_fro(reconstruct(dec, np.eye(r)), W) < 1e-13


def test_moft_factor_has_orthonormal_columns(W):
    dec = decompose(W, 5)
    assert np.linalg.norm(dec.A.T @ dec.A - np.eye(5)) < 1e-13


def test_pissa_factors_share_root_spectrum(W):
    dec = decompose(W, 4, Variant.PISSA)
    G = dec.A.T @ dec.A
    np.testing.assert_allclose(G, np.diag(dec.singular_values), atol=1e-12)
    np.testing.assert_allclose(dec.B @ dec.B.T, np.diag(dec.singular_values), atol=1e-12)


def test_residual_is_orthogonal_to_principal_part(W):
    dec = decompose(W, 3)
    assert np.linalg.norm(dec.A.T @ dec.W_res) < 1e-12
    assert np.linalg.norm(dec.W_res @ dec.B.T) < 1e-12


def test_full_rank_leaves_no_residual(W):
    assert np.linalg.norm(decompose(W, 9).W_res) == 0.0


def test_invalid_rank(W):
    for r in (0, 10, -1, 2.0, True):
        with pytest.raises(InvalidRank):
            decompose(W, r)


def test_rank_deficient_warns():
    rng = np.random.default_rng(1)
    W = rng.standard_normal((8, 2)) @ rng.standard_normal((2, 6))
    with pytest.warns(RankDeficientWarning):
        dec = decompose(W, 3)
    assert dec.rank_deficient
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert not decompose(W, 2).rank_deficient


def test_randomized_mode(W):
    dec = decompose(W, 3, svd_mode=randomized(n_iter=5, seed=1))
    assert dec.left_basis is None
    assert rel_fro(dec.weights(), W) < 1e-13
    exact = decompose(W, 3)
    np.testing.assert_allclose(dec.singular_values, exact.singular_values, rtol=1e-6)
    with pytest.raises(InvalidBasis):
        embed_full_space(dec, np.eye(3))


def test_svd_mode_roundtrip():
    for mode in (SvdMode(), randomized(4, 9)):
        assert SvdMode.from_dict(mode.to_dict()) == mode
    with pytest.raises(InvalidInput):
        SvdMode("lanczos")


@pytest.mark.parametrize("r", [1, 3, 8, 9])
def test_full_space_embedding_matches_reconstruct(W, r):
    dec = decompose(W, r)
    R = random_orthogonal(r, np.random.default_rng(r))
    assert rel_fro(embed_full_space(dec, R), reconstruct(dec, R)) < 1e-12


def test_full_space_rejects_bad_basis(W):
    dec = decompose(W, 3)
    with pytest.raises(InvalidBasis):
        embed_full_space(dec, np.eye(3), U_full=np.eye(12))
    with pytest.raises(InvalidBasis):
        embed_full_space(dec, np.eye(3), U_full=2 * dec.left_basis)
    with pytest.raises(InvalidBasis):
        embed_full_space(dec, np.eye(3), U_full=np.eye(5))
    with pytest.raises(InvalidInput):
        embed_full_space(decompose(W, 3, Variant.PISSA), np.eye(3))
    with pytest.raises(ShapeError):
        reconstruct(dec, np.eye(4))

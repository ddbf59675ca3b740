import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moft.cayley import CayleyParams, cayley_backward, cayley_forward, materialize_Q, n_params
from moft.errors import InvalidInput, ShapeError
from conftest import central_fd


def test_param_counts():
    assert [n_params(r) for r in (1, 2, 3, 4, 72)] == [0, 1, 3, 6, 2556]


def test_q_layout_row_major():
    Q = materialize_Q(CayleyParams(3, [1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(Q, [[0, 1, 2], [-1, 0, 3], [-2, -3, 0]])


def test_zero_gives_identity():
    for r in (1, 2, 5):
        assert np.array_equal(cayley_forward(CayleyParams.identity(r)), np.eye(r))


def test_r2_closed_form():
    # For Q = [[0, t], [-t, 0]] the transform is a plane rotation by 2 atan(t).
    t = 0.7
    R = cayley_forward(CayleyParams(2, [t]))
    th = 2 * np.arctan(t)
    np.testing.assert_allclose(R, [[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10), st.floats(0.01, 50.0), st.integers(0, 2**31 - 1))
def test_orthogonal_with_unit_determinant(r, scale, seed):
    p = CayleyParams.random(r, np.random.default_rng(seed), scale)
    R = cayley_forward(p)
    assert np.linalg.norm(R.T @ R - np.eye(r)) < 1e-10
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


def test_negated_parameters_give_transpose():
    p = CayleyParams.random(5, np.random.default_rng(0))
    np.testing.assert_allclose(cayley_forward(-p), cayley_forward(p).T, atol=1e-14)


def test_backward_at_zero_r2():
    # dR/dq = -2 [[0, 1], [-1, 0]] at q = 0, so G = e_0 e_1^T gives -2.
    g = cayley_backward(CayleyParams.identity(2), np.array([[0.0, 1.0], [0.0, 0.0]]))
    assert g == pytest.approx([-2.0], abs=1e-15)


@pytest.mark.parametrize("r,scale", [(2, 1.0), (4, 0.3), (6, 2.0), (8, 10.0)])
def test_backward_matches_finite_differences(r, scale):
    rng = np.random.default_rng(r)
    p = CayleyParams.random(r, rng, scale)
    C = rng.standard_normal((r, r))

    def loss(q):
        return float(np.sum(C * cayley_forward(CayleyParams(r, q))))

    numeric = central_fd(loss, p.q)
    analytic = cayley_backward(p, C)
    assert np.max(np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1e-8)) < 1e-5


def test_rank_one_has_no_parameters():
    p = CayleyParams.identity(1)
    assert p.q.size == 0
    assert cayley_backward(p, np.ones((1, 1))).size == 0


def test_validation():
    with pytest.raises(ShapeError):
        CayleyParams(3, [1.0])
    with pytest.raises(InvalidInput):
        CayleyParams(2, [np.inf])
    with pytest.raises(InvalidInput):
        CayleyParams(0, [])
    with pytest.raises(ShapeError):
        cayley_backward(CayleyParams.identity(2), np.ones((3, 3)))
    p = CayleyParams.identity(3)
    with pytest.raises(ValueError):
        p.q[0] = 1.0

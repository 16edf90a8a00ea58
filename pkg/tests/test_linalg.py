import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fullmdn import linalg
from fullmdn.errors import InvalidInputError, ShapeError, SingularFactorError

from oracles import dense_factor, dense_upper, random_raw


def packed(n, elements=st.floats(-3, 3)):
    return arrays(np.float64, n * (n + 1) // 2, elements=elements)


def test_packed_layout_is_row_major_upper():
    assert [linalg.packed_index(3, r, c) for r in range(3) for c in range(r, 3)] == list(range(6))
    assert list(linalg.diag_indices(3)) == [0, 3, 5]
    assert linalg.packed_dim(10) == 4
    with pytest.raises(ShapeError):
        linalg.packed_dim(4)


# -- exp_diag ------------------------------------------------------------------------


def test_exp_diag_zero_diagonal_keeps_off_diagonal():
    np.testing.assert_array_equal(linalg.exp_diag([0.0, 5.0, 0.0]), [1.0, 5.0, 1.0])


def test_exp_diag_scalar():
    assert linalg.exp_diag([math.log(2.0)])[0] == pytest.approx(2.0, rel=1e-15)


def test_exp_diag_matches_elementwise_oracle():
    rng = np.random.default_rng(3)
    u = rng.standard_normal(6)
    out = linalg.exp_diag(u)
    for pos, (r, c) in enumerate((r, c) for r in range(3) for c in range(r, 3)):
        assert out[pos] == (pytest.approx(math.exp(u[pos]), rel=1e-15) if r == c else u[pos])


def test_exp_diag_clamps_instead_of_overflowing():
    out = linalg.exp_diag([1000.0, 0.5, -1000.0])
    assert out[0] == math.exp(30.0) and out[2] == math.exp(-30.0)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_exp_diag_rejects_non_finite(bad):
    with pytest.raises(InvalidInputError):
        linalg.exp_diag([0.0, bad, 0.0])


def test_wrong_packed_length_is_a_shape_error():
    with pytest.raises(ShapeError):
        linalg.exp_diag(np.zeros(5))


@given(packed(4, st.floats(-1e3, 1e3)))
def test_zero_diagonal_maps_to_unit_diagonal(u):
    u = u.copy()
    u[linalg.diag_indices(4)] = 0.0
    assert np.all(linalg.exp_diag(u)[linalg.diag_indices(4)] == 1.0)


# -- log determinant -----------------------------------------------------------------


def test_log_det_identity_diagonal_is_zero():
    assert linalg.log_det_half_precision([0.0, 7.5, 0.0]) == 0.0


def test_log_det_sum_of_logs():
    val = linalg.log_det_half_precision([math.log(2), -4.0, math.log(3)])
    assert val == pytest.approx(math.log(6), abs=1e-15)
    assert val == pytest.approx(1.791759, abs=1e-6)


def test_log_det_matches_dense_lu_determinant():
    rng = np.random.default_rng(11)
    u = random_raw(rng, 5)
    ubar = dense_factor(u, 5)
    expected = 0.5 * math.log(np.linalg.det(ubar.T @ ubar))
    assert abs(linalg.log_det_half_precision(u) - expected) < 1e-8


@given(packed(4), arrays(np.float64, 10, elements=st.floats(-50, 50)))
def test_log_det_ignores_off_diagonals_bitwise(u, noise):
    v = u.copy()
    off = np.ones(10, bool)
    off[linalg.diag_indices(4)] = False
    v[off] = noise[off]
    assert linalg.log_det_half_precision(u) == linalg.log_det_half_precision(v)


# -- triangular products and solves -------------------------------------------------------


def test_tri_matvec_identity():
    np.testing.assert_array_equal(linalg.tri_matvec([1, 0, 0, 1, 0, 1], [1, 2, 3]), [1, 2, 3])


def test_tri_matvec_hand_case():
    np.testing.assert_array_equal(linalg.tri_matvec([1, 2, 3], [1, 1]), [3, 3])


def test_tri_matvec_matches_dense():
    rng = np.random.default_rng(5)
    c = rng.standard_normal(10)
    v = rng.standard_normal(4)
    assert np.max(np.abs(linalg.tri_matvec(c, v) - dense_upper(c, 4) @ v)) < 1e-12


def test_tri_matvec_shape_mismatch():
    with pytest.raises(ShapeError):
        linalg.tri_matvec([1, 0, 1], [1, 2, 3])


def test_tri_rmatvec_is_transpose_product():
    rng = np.random.default_rng(6)
    c = rng.standard_normal((7, 10))
    g = rng.standard_normal((7, 4))
    expected = np.einsum("bji,bj->bi", dense_upper_batch(c, 4), g)
    np.testing.assert_allclose(linalg._tri_rmatvec(c, g, 4), expected, atol=1e-13)


def dense_upper_batch(c, n):
    return np.stack([dense_upper(row, n) for row in c])


def test_solve_identity():
    np.testing.assert_array_equal(linalg.solve_lower_transposed([1, 0, 1], [4, 5]), [4, 5])


def test_solve_hand_case():
    np.testing.assert_allclose(linalg.solve_lower_transposed([2, 1, 4], [2, 6]), [1, 1.25], rtol=0, atol=1e-15)


def test_solve_round_trip_residual():
    rng = np.random.default_rng(8)
    c = linalg.exp_diag(random_raw(rng, 6))
    rhs = rng.standard_normal(6)
    v = linalg.solve_lower_transposed(c, rhs)
    assert np.max(np.abs(dense_upper(c, 6).T @ v - rhs)) < 1e-10


def test_solve_is_batched():
    rng = np.random.default_rng(9)
    c = linalg.exp_diag(rng.standard_normal((5, 6)) * 0.3)
    rhs = rng.standard_normal((5, 3))
    out = linalg.solve_lower_transposed(c, rhs)
    for b in range(5):
        np.testing.assert_array_equal(out[b], linalg.solve_lower_transposed(c[b], rhs[b]))


def test_solve_singular_factor():
    with pytest.raises(SingularFactorError):
        linalg.solve_lower_transposed([1e-301, 0.0, 1.0], [1.0, 1.0])


@settings(max_examples=200)
@given(packed(5, st.floats(-2, 2)), arrays(np.float64, 5, elements=st.floats(-10, 10)))
def test_solve_then_multiply_is_identity(u, rhs):
    c = linalg.exp_diag(u)
    dense = dense_upper(c, 5)
    if np.linalg.cond(dense) >= 1e6:
        return
    v = linalg.solve_lower_transposed(c, rhs)
    resid = np.max(np.abs(dense.T @ v - rhs))
    assert resid <= 1e-10 * max(1.0, np.max(np.abs(rhs)))


# -- covariance ------------------------------------------------------------------------------


def test_covariance_identity():
    np.testing.assert_array_equal(linalg.covariance_from_factor([1, 0, 0, 1, 0, 1]), np.eye(3))


def test_covariance_scalar():
    c = linalg.exp_diag([math.log(2)])
    np.testing.assert_allclose(linalg.covariance_from_factor(c), [[0.25]], rtol=1e-15)


def test_covariance_residual():
    rng = np.random.default_rng(12)
    c = linalg.exp_diag(random_raw(rng, 4))
    ubar = dense_upper(c, 4)
    sigma = linalg.covariance_from_factor(c)
    assert np.max(np.abs(sigma @ (ubar.T @ ubar) - np.eye(4))) < 1e-8


@given(packed(4, st.floats(-2, 2)))
def test_covariance_is_symmetric_with_positive_diagonal(u):
    sigma = linalg.covariance_from_factor(linalg.exp_diag(u))
    assert np.max(np.abs(sigma - sigma.T)) < 1e-10 * max(1.0, np.max(np.abs(sigma)))
    assert np.all(np.diag(sigma) > 0)


def test_dense_round_trip():
    u = np.arange(1.0, 7.0)
    np.testing.assert_array_equal(linalg.from_dense(linalg.to_dense(u)), u)
    np.testing.assert_array_equal(linalg.to_dense(u), dense_upper(u, 3))


def test_solve_upper_hand_case():
    # [[2, 1], [0, 4]] v = (4, 8) -> v = (1, 2)
    np.testing.assert_allclose(linalg.solve_upper([2, 1, 4], [4, 8]), [1.0, 2.0], rtol=0, atol=1e-15)


def test_solve_upper_inverts_tri_matvec():
    rng = np.random.default_rng(13)
    c = linalg.exp_diag(random_raw(rng, 6))
    v = rng.standard_normal(6)
    assert np.max(np.abs(linalg.solve_upper(c, linalg.tri_matvec(c, v)) - v)) < 1e-10


def test_inverse_factor_is_a_covariance_root_but_inverse_transpose_is_not():
    # Sigma = (U^T U)^{-1} = U^{-1} U^{-T}: the root applied to noise must be U^{-1}.
    c = linalg.exp_diag([0.2, 1.5, -0.3])
    sigma = linalg.covariance_from_factor(c)
    u_inv = np.stack([linalg.solve_upper(c, e) for e in np.eye(2)], axis=1)
    u_inv_t = np.stack([linalg.solve_lower_transposed(c, e) for e in np.eye(2)], axis=1)
    np.testing.assert_allclose(u_inv @ u_inv.T, sigma, atol=1e-12)
    assert np.max(np.abs(u_inv_t @ u_inv_t.T - sigma)) > 0.1

import itertools
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import scipy.fft

from mfbd import conv
from mfbd.errors import DimensionError

from oracles import dense_valid_conv_matrix, direct_circular, direct_full, direct_valid

RNG = np.random.default_rng(1234)


def rel_err(got, want):
    scale = np.linalg.norm(np.asarray(want).ravel())
    return np.linalg.norm((np.asarray(got) - np.asarray(want)).ravel()) / max(scale, 1e-300)


# ---------------------------------------------------------------- circular

def test_circular_delta_is_identity():
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    out = conv.conv_circular(x, np.array([[1.0]]))
    np.testing.assert_allclose(out, x, atol=1e-12)


def test_circular_matches_periodic_summation():
    # frozen from the direct periodic sum: x=[1,2,3,4], a=[1,1] -> [5,3,5,7]
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    a = np.array([[1.0, 1.0]])
    np.testing.assert_allclose(conv.conv_circular(x, a), [[5.0, 3.0, 5.0, 7.0]], atol=1e-12)
    np.testing.assert_allclose(conv.conv_circular(x, a), direct_circular(x, a), atol=1e-12)


def test_circular_preserves_brightness():
    for _ in range(5):
        x = RNG.uniform(0, 255, (9, 13))
        a = RNG.uniform(0, 1, (3, 4))
        a /= a.sum()
        out = conv.conv_circular(x, a)
        assert abs(out.sum() - x.sum()) < 1e-9 * max(1.0, abs(x.sum()))


def test_circular_shape_violation():
    with pytest.raises(DimensionError):
        conv.conv_circular(np.ones((2, 2)), np.ones((3, 1)))


# ------------------------------------------------------------------- valid

def test_valid_identity_and_1d_case():
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    np.testing.assert_allclose(conv.conv_valid(x, [[1.0]]), x, atol=1e-12)
    # frozen from the direct sum restricted to full overlap
    np.testing.assert_allclose(conv.conv_valid(x, [[1.0, 1.0]]), [[3.0, 5.0, 7.0]], atol=1e-12)


def test_valid_2d_ones_case():
    out = conv.conv_valid(np.ones((3, 3)), np.ones((2, 2)))
    np.testing.assert_allclose(out, np.full((2, 2), 4.0), atol=1e-12)


def test_valid_is_exact_crop_of_circular():
    for _ in range(10):
        x = RNG.normal(size=(12, 17))
        a = RNG.normal(size=(4, 3))
        circ = conv.conv_circular(x, a)
        valid = conv.conv_valid(x, a)
        # same FFT plan: the crop agrees bit for bit
        assert np.array_equal(valid, circ[a.shape[0] - 1:, a.shape[1] - 1:])


def test_valid_shape_violation():
    with pytest.raises(DimensionError):
        conv.conv_valid(np.ones((3, 3)), np.ones((2, 4)))


# -------------------------------------------------------------------- full

def test_full_identity_and_small_cases():
    a = np.array([[2.0, 5.0, 7.0]])
    np.testing.assert_allclose(conv.conv_full([[1.0]], a), a, atol=1e-12)
    np.testing.assert_allclose(
        conv.conv_full([[1.0, 1.0]], [[1.0, 1.0]]), [[1.0, 2.0, 1.0]], atol=1e-12)


def test_associativity_of_full_and_valid():
    x = RNG.normal(size=(16, 16))
    a = RNG.normal(size=(3, 3))
    b = RNG.normal(size=(2, 2))
    lhs = conv.conv_valid(conv.conv_valid(x, a), b)
    rhs = conv.conv_valid(x, conv.conv_full(b, a))
    assert np.abs(lhs - rhs).max() < 1e-9


def test_fft_matches_direct_oracle_many_cases():
    # the backbone oracle check across modes and sizes
    for _ in range(60):
        xr, xc = RNG.integers(2, 20, 2)
        ar = RNG.integers(1, xr + 1)
        ac = RNG.integers(1, xc + 1)
        x = RNG.uniform(-1, 1, (xr, xc))
        a = RNG.uniform(-1, 1, (ar, ac))
        assert rel_err(conv.conv_circular(x, a), direct_circular(x, a)) < 1e-9
        assert rel_err(conv.conv_valid(x, a), direct_valid(x, a)) < 1e-9
        assert rel_err(conv.conv_full(x, a), direct_full(x, a)) < 1e-9


def test_real_fft_matches_complex_transform():
    x = RNG.normal(size=(11, 7))
    a = RNG.normal(size=(4, 5))
    fx = scipy.fft.fft2(x)
    fa = scipy.fft.fft2(a, s=x.shape)
    complex_circ = scipy.fft.ifft2(fx * fa).real
    assert rel_err(conv.conv_circular(x, a), complex_circ) < 1e-9


def test_linearity_in_both_arguments():
    x1, x2 = RNG.normal(size=(8, 8)), RNG.normal(size=(8, 8))
    a1, a2 = RNG.normal(size=(3, 3)), RNG.normal(size=(3, 3))
    al, be = 0.7, -1.3
    lhs = conv.conv_valid(al * x1 + be * x2, a1)
    rhs = al * conv.conv_valid(x1, a1) + be * conv.conv_valid(x2, a1)
    assert rel_err(lhs, rhs) < 1e-10
    lhs = conv.conv_valid(x1, al * a1 + be * a2)
    rhs = al * conv.conv_valid(x1, a1) + be * conv.conv_valid(x1, a2)
    assert rel_err(lhs, rhs) < 1e-10


# -------------------------------------------------------------- operators

def test_image_operator_columns_are_windows():
    x = RNG.normal(size=(6, 7))
    op = conv.ImageOperator(x, (2, 3))
    # filter entry (k1,k2) selects the window at the flipped offset
    for k1 in range(2):
        for k2 in range(3):
            e = np.zeros((2, 3))
            e[k1, k2] = 1.0
            want = x[1 - k1:1 - k1 + op.out_shape[0], 2 - k2:2 - k2 + op.out_shape[1]]
            np.testing.assert_allclose(op.apply(e), want, atol=1e-9)


def test_image_operator_adjoint_identity():
    x = RNG.normal(size=(9, 11))
    op = conv.ImageOperator(x, (3, 4))
    for _ in range(10):
        a = RNG.normal(size=op.in_shape)
        y = RNG.normal(size=op.out_shape)
        lhs = np.vdot(op.apply(a), y)
        rhs = np.vdot(a, op.apply_adjoint(y))
        assert abs(lhs - rhs) < 1e-10 * max(abs(lhs), abs(rhs), 1.0)


def test_image_operator_dense_matches_oracle():
    x = RNG.normal(size=(7, 6))
    op = conv.ImageOperator(x, (3, 2))
    dense = op.to_dense()
    oracle = dense_valid_conv_matrix(x, (3, 2))
    assert rel_err(dense, oracle) < 1e-9


def test_filter_operator_commutativity_with_image_operator():
    # conv_valid(x, a) evaluated with either argument fixed
    x = RNG.normal(size=(10, 10))
    a = RNG.normal(size=(3, 3))
    ya = conv.ImageOperator(x, a.shape).apply(a)
    yx = conv.FilterOperator(a, x.shape).apply(x)
    assert rel_err(ya, yx) < 1e-10


def test_filter_operator_adjoint_identity():
    a = RNG.normal(size=(3, 3))
    op = conv.FilterOperator(a, (8, 9))
    for _ in range(10):
        x = RNG.normal(size=op.in_shape)
        y = RNG.normal(size=op.out_shape)
        assert abs(np.vdot(op.apply(x), y) - np.vdot(x, op.apply_adjoint(y))) < 1e-9


def test_window_crop_enumerates_windows():
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    b0 = conv.window_crop(0, x.shape, (1, 2))
    b1 = conv.window_crop(1, x.shape, (1, 2))
    # origin-aligned orientation: k=0 selects the window at x's origin
    np.testing.assert_allclose(b0.apply(x), [[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(b1.apply(x), [[2.0, 3.0, 4.0]])
    # each window equals valid convolution with the matching delta
    delta = np.array([[0.0, 1.0]])  # entry 1 weights the origin window
    np.testing.assert_allclose(b0.apply(x), conv.conv_valid(x, delta), atol=1e-12)


def test_window_crop_adjoint_is_01_diagonal():
    op = conv.window_crop((1, 2), (5, 6), (3, 3))
    dense = op.to_dense()
    gram = dense.T @ dense
    assert np.array_equal(gram, np.diag(np.diag(gram)))
    assert set(np.unique(np.diag(gram))) <= {0.0, 1.0}


def test_windows_span_image_operator_range():
    x = RNG.normal(size=(8, 8))
    psf_shape = (2, 2)
    stacked = [conv.window_crop(k, x.shape, psf_shape).apply(x).ravel() for k in range(4)]
    rank = np.linalg.matrix_rank(np.array(stacked))
    dense_x = dense_valid_conv_matrix(x, psf_shape)
    assert rank == np.linalg.matrix_rank(dense_x.T)


def test_shift_crop_identity_and_composition():
    y = RNG.normal(size=(6, 6))
    ident = conv.shift_crop(0, y.shape, (1, 1))
    np.testing.assert_allclose(ident.apply(y), y)
    # D_t B_k equals the window composition, checked densely
    x_shape = (8, 8)
    bk = conv.window_crop((1, 1), x_shape, (3, 3))
    dt = conv.shift_crop((0, 1), bk.out_shape, (2, 2))
    composed = dt.to_dense() @ bk.to_dense()
    direct = conv.CropOperator(x_shape, (1, 2), dt.out_shape).to_dense()
    assert np.array_equal(composed, direct)


def test_shift_crop_shifts_the_filter():
    # cropping an observation is a valid convolution with a delta, so the
    # underlying filter is shifted by full convolution with that delta
    x = RNG.uniform(0, 1, (12, 12))
    a = RNG.uniform(0, 1, (3, 3))
    y = conv.conv_valid(x, a)
    d_shape = (2, 2)
    for t in range(4):
        op = conv.shift_crop(t, y.shape, d_shape)
        off = (t // 2, t % 2)
        delta = np.zeros(d_shape)
        delta[d_shape[0] - 1 - off[0], d_shape[1] - 1 - off[1]] = 1.0
        want = conv.conv_valid(x, conv.conv_full(delta, a))
        assert np.abs(op.apply(y) - want).max() < 1e-9


def test_index_out_of_range_errors():
    with pytest.raises(DimensionError):
        conv.window_crop(4, (5, 5), (2, 2))
    with pytest.raises(DimensionError):
        conv.shift_crop((2, 0), (5, 5), (2, 2))


def test_window_matrix_rows_are_windows():
    x = RNG.normal(size=(5, 5))
    wm = conv.window_matrix(x, (2, 2))
    assert wm.shape == (4, 16)
    np.testing.assert_allclose(wm[3], x[1:5, 1:5].ravel())
    # reversed row order gives the dense convolution matrix columns
    np.testing.assert_allclose(wm[::-1].T, dense_valid_conv_matrix(x, (2, 2)), atol=1e-12)


def test_concurrent_applies_are_bit_identical():
    x = RNG.normal(size=(16, 16))
    op = conv.ImageOperator(x, (3, 3))
    filters = [RNG.normal(size=(3, 3)) for _ in range(24)]
    sequential = [op.apply(a) for a in filters]
    with ThreadPoolExecutor(max_workers=8) as pool:
        concurrent = list(pool.map(op.apply, filters))
    for s, c in zip(sequential, concurrent):
        assert np.array_equal(s, c)


def test_validate_psf():
    conv.validate_psf(np.full((2, 2), 0.25))
    with pytest.raises(DimensionError):
        conv.validate_psf(np.array([[0.5, 0.6]]))
    with pytest.raises(DimensionError):
        conv.validate_psf(np.array([[0.9, -0.1]]) / 0.8)

import numpy as np
import pytest

from equikernel import so3
from equikernel.errors import DegenerateEdgeError
from equikernel.irreps import (
    IrrepsLayout,
    PathWeights,
    depthwise_tensor_product,
    equivariant_linear,
    rotate,
    so3_convolution,
)

from conftest import feature


def tp_reference(x, r, pw):
    """Dense tensor product written directly from the path sum, one edge."""
    d = np.asarray(r) / np.linalg.norm(r)
    Y = so3.spherical_harmonics(d, pw.lmax_filter)
    out = np.zeros(((pw.lmax_out + 1) ** 2, pw.c_out))
    for (li, lf, lo), w in pw.weights.items():
        C = so3.clebsch_gordan(li, lf, lo)
        t = np.einsum("ijk,ic,j->kc", C, x[so3.degree_slice(li)], Y[so3.degree_slice(lf)])
        t = t * w if pw.depthwise else t @ np.asarray(w).T
        out[so3.degree_slice(lo)] += pw.path_scale(lo) * t
    return out


def test_layout_sizes():
    lay = IrrepsLayout(3, 5)
    assert lay.num_components == 16 and lay.size == 80 and lay.zeros(2).shape == (2, 16, 5)
    with pytest.raises(ValueError):
        lay.check(np.zeros((9, 5)))


def test_linear_identity(rng):
    x = feature(rng, 3, 4)
    W = np.stack([np.eye(4)] * 4)
    np.testing.assert_array_equal(equivariant_linear(x, W, np.zeros(4)), x)


def test_linear_scalar_only_is_affine(rng):
    x = feature(rng, 0, 3, 5)
    W = rng.normal(size=(1, 2, 3))
    b = rng.normal(size=2)
    np.testing.assert_allclose(equivariant_linear(x, W, b)[:, 0], x[:, 0] @ W[0].T + b, atol=1e-14)


def test_linear_equivariant(rng):
    x = feature(rng, 4, 3)
    W = rng.normal(size=(5, 2, 3))
    b = rng.normal(size=2)
    for _ in range(5):
        R = so3.random_rotation(rng)
        np.testing.assert_allclose(
            equivariant_linear(rotate(x, R), W, b), rotate(equivariant_linear(x, W, b), R), atol=1e-10
        )


def test_linear_shape_errors(rng):
    x = feature(rng, 2, 3)
    with pytest.raises(ValueError):
        equivariant_linear(x, rng.normal(size=(2, 2, 3)))
    with pytest.raises(ValueError):
        equivariant_linear(x, rng.normal(size=(3, 2, 4)))


def test_path_weights_validation(rng):
    with pytest.raises(ValueError):
        PathWeights(1, 1, 3, 1, 1, {(1, 1, 3): np.ones((1, 1))})
    with pytest.raises(ValueError):
        PathWeights(1, 1, 1, 2, 2, {(1, 1, 1): np.ones((1, 1))})


def test_so3_convolution_matches_path_sum(rng):
    pw = PathWeights.random(2, 3, 2, rng)
    x = feature(rng, 2, 3)
    r = rng.normal(size=3)
    np.testing.assert_allclose(so3_convolution(x, r, pw), tp_reference(x, r, pw), atol=1e-13)


def test_so3_convolution_zero_input(rng):
    pw = PathWeights.random(2, 3, 2, rng)
    assert not so3_convolution(np.zeros((9, 3)), [1.0, 0.0, 0.0], pw).any()


def test_so3_convolution_scalar_only(rng):
    w = rng.normal(size=(2, 3))
    pw = PathWeights(0, 0, 0, 3, 2, {(0, 0, 0): w})
    x = feature(rng, 0, 3)
    np.testing.assert_allclose(so3_convolution(x, rng.normal(size=3), pw), x @ w.T, atol=1e-14)


def test_so3_convolution_linear_in_x(rng):
    pw = PathWeights.random(2, 2, 2, rng)
    a, b = feature(rng, 2, 2), feature(rng, 2, 2)
    r = rng.normal(size=3)
    np.testing.assert_allclose(
        so3_convolution(2.0 * a - b, r, pw), 2.0 * so3_convolution(a, r, pw) - so3_convolution(b, r, pw), atol=1e-12
    )


def test_so3_convolution_equivariant(rng):
    pw = PathWeights.random(3, 2, 2, rng)
    x = feature(rng, 3, 2, 4)
    r = rng.normal(size=(4, 3))
    for _ in range(5):
        R = so3.random_rotation(rng)
        np.testing.assert_allclose(
            so3_convolution(rotate(x, R), r @ R.T, pw), rotate(so3_convolution(x, r, pw), R), atol=1e-10
        )


def test_so3_convolution_truncation(rng):
    pw = PathWeights.random(2, 2, 2, rng)
    x = feature(rng, 2, 2)
    r = rng.normal(size=3)
    low = so3_convolution(x, r, pw, lmax_out=1)
    assert low.shape == (4, 2)
    np.testing.assert_array_equal(low, so3_convolution(x, r, pw)[:4])


def test_degenerate_edge(rng):
    pw = PathWeights.random(1, 1, 1, rng)
    with pytest.raises(DegenerateEdgeError):
        so3_convolution(feature(rng, 1, 1), [0.0, 0.0, 0.0], pw)


def test_depthwise_single_channel_equals_full(rng):
    dw = PathWeights.random(2, 1, 1, rng, depthwise=True)
    full = PathWeights(2, 2, 2, 1, 1, {p: w.reshape(1, 1) for p, w in dw.weights.items()})
    x = feature(rng, 2, 1)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    Y = so3.spherical_harmonics(d, 2)
    np.testing.assert_allclose(depthwise_tensor_product(x, Y, dw), so3_convolution(x, d, full), atol=1e-14)


def test_depthwise_matches_path_sum_and_is_channelwise(rng):
    dw = PathWeights.random(2, 3, 3, rng, depthwise=True)
    x = feature(rng, 2, 3)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    Y = so3.spherical_harmonics(d, 2)
    out = depthwise_tensor_product(x, Y, dw)
    np.testing.assert_allclose(out, tp_reference(x, d, dw), atol=1e-13)
    x2 = x.copy()
    x2[:, 1] += 1.0
    diff = depthwise_tensor_product(x2, Y, dw) - out
    assert not diff[:, [0, 2]].any()


def test_depthwise_single_path_selection(rng):
    w = {(1, 1, 2): rng.normal(size=2)}
    dw = PathWeights(2, 2, 2, 2, 2, w, depthwise=True)
    d = np.array([0.6, 0.0, 0.8])
    out = depthwise_tensor_product(feature(rng, 2, 2), so3.spherical_harmonics(d, 2), dw)
    assert not out[:4].any() and out[4:].any()


def test_depthwise_equivariant(rng):
    dw = PathWeights.random(3, 2, 2, rng, depthwise=True)
    x = feature(rng, 3, 2)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    for _ in range(5):
        R = so3.random_rotation(rng)
        lhs = depthwise_tensor_product(rotate(x, R), so3.spherical_harmonics(R @ d, 3), dw)
        np.testing.assert_allclose(lhs, rotate(depthwise_tensor_product(x, so3.spherical_harmonics(d, 3), dw), R), atol=1e-10)


def test_depthwise_channel_mismatch(rng):
    dw = PathWeights.random(1, 2, 2, rng, depthwise=True)
    with pytest.raises(ValueError):
        depthwise_tensor_product(feature(rng, 1, 3), np.ones(4), dw)

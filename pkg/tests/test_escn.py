import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equikernel import so3
from equikernel.errors import DegenerateEdgeError
from equikernel.escn import (
    SO2LinearWeights,
    edge_wigner,
    escn_convolution,
    reparametrize_weights,
    so2_linear,
)
from equikernel.irreps import PathWeights, rotate, so3_convolution

from conftest import feature


def order_mask(lmax, mmax):
    m = np.concatenate([np.arange(-L, L + 1) for L in range(lmax + 1)])
    return (np.abs(m) <= mmax)[:, None]


def test_scalar_layout_is_plain_linear(rng):
    w = SO2LinearWeights.random(0, 0, 0, 3, 2, rng)
    x = feature(rng, 0, 3, 4)
    np.testing.assert_allclose(so2_linear(x, w)[:, 0], x[:, 0] @ w.w0.T, atol=1e-14)


@pytest.mark.parametrize("mmax", [0, 1, 2, 3])
def test_identity_truncates_orders(rng, mmax):
    x = feature(rng, 3, 2)
    y = so2_linear(x, SO2LinearWeights.identity(3, mmax, 2))
    np.testing.assert_array_equal(y, x * order_mask(3, mmax))


def test_block_has_complex_structure(rng):
    w = SO2LinearWeights.random(3, 3, 3, 1, 1, rng)
    B = w.block(2, 3, 2)
    assert B[0, 0] == B[1, 1] and B[0, 1] == -B[1, 0]


def test_weight_shape_validation(rng):
    with pytest.raises(ValueError):
        SO2LinearWeights(2, 2, 3, 1, 1, np.zeros((3, 3)), [])
    w = SO2LinearWeights.random(2, 2, 1, 2, 2, rng)
    with pytest.raises(ValueError):
        so2_linear(feature(rng, 1, 2), w)


@settings(max_examples=30, deadline=None)
@given(st.floats(-np.pi, np.pi), st.integers(0, 2**32 - 1))
def test_commutes_with_y_rotations(angle, seed):
    rng = np.random.default_rng(seed)
    w = SO2LinearWeights.random(3, 2, 2, 2, 3, rng)
    x = feature(rng, 3, 2)
    G = so3.y_rotation(angle)
    np.testing.assert_allclose(so2_linear(rotate(x, G), w), rotate(so2_linear(x, w), G), atol=1e-10)


def test_escn_zero_input(rng):
    w = SO2LinearWeights.random(2, 2, 2, 2, 2, rng)
    assert not escn_convolution(np.zeros((9, 2)), rng.normal(size=3), w).any()


def test_escn_degenerate_edge(rng):
    w = SO2LinearWeights.random(1, 1, 1, 1, 1, rng)
    with pytest.raises(DegenerateEdgeError):
        escn_convolution(feature(rng, 1, 1), np.zeros(3), w)


def test_gauge_independence(rng):
    w = SO2LinearWeights.random(3, 3, 2, 3, 2, rng)
    x = feature(rng, 3, 3, 20)
    r = rng.normal(size=(20, 3))
    base = escn_convolution(x, r, w)
    for _ in range(20):
        G = so3.y_rotation(rng.uniform(-np.pi, np.pi))
        np.testing.assert_allclose(escn_convolution(x, r, w, gauge=G), base, atol=1e-10)


def test_edge_wigner_aligns(rng):
    r = rng.normal(size=(6, 3))
    R, packed = edge_wigner(r, 2)
    np.testing.assert_allclose(np.einsum("eij,ej->ei", R, r / np.linalg.norm(r, axis=1, keepdims=True)), np.tile([0, 1, 0], (6, 1)), atol=1e-12)
    assert packed.shape == (6, 1 + 9 + 25)


def test_escn_equivariant(rng):
    w = SO2LinearWeights.random(3, 3, 3, 2, 2, rng)
    x = feature(rng, 3, 2, 5)
    r = rng.normal(size=(5, 3))
    for _ in range(10):
        R = so3.random_rotation(rng)
        np.testing.assert_allclose(
            escn_convolution(rotate(x, R), r @ R.T, w), rotate(escn_convolution(x, r, w), R), atol=1e-9
        )


@pytest.mark.parametrize("lmax", [1, 2, 3])
def test_oracle_equivalence(rng, lmax):
    pw = PathWeights.random(lmax, 3, 2, rng)
    x = feature(rng, lmax, 3, 20)
    r = rng.normal(size=(20, 3))
    np.testing.assert_allclose(
        escn_convolution(x, r, reparametrize_weights(pw)), so3_convolution(x, r, pw), atol=1e-8
    )


def test_oracle_equivalence_mixed_degrees(rng):
    pw = PathWeights.random(3, 2, 2, rng, lmax_filter=2, lmax_out=2)
    x = feature(rng, 3, 2, 10)
    r = rng.normal(size=(10, 3))
    np.testing.assert_allclose(
        escn_convolution(x, r, reparametrize_weights(pw)), so3_convolution(x, r, pw), atol=1e-8
    )


def test_reparametrize_zero_weights(rng):
    pw = PathWeights.random(2, 2, 2, rng)
    pw = PathWeights(2, 2, 2, 2, 2, {p: np.zeros_like(w) for p, w in pw.weights.items()})
    w = reparametrize_weights(pw)
    assert not w.w0.any() and not any(a.any() or b.any() for a, b in w.wm)


def test_reparametrize_single_scalar_path():
    pw = PathWeights(0, 0, 0, 1, 1, {(0, 0, 0): np.array([[2.5]])})
    w = reparametrize_weights(pw)
    assert w.w0.shape == (1, 1)
    assert w.w0[0, 0] == 2.5 * so3.clebsch_gordan(0, 0, 0)[0, 0, 0]


def test_mmax_truncation_reproduced_by_zeroing(rng):
    full = SO2LinearWeights.random(3, 3, 3, 2, 2, rng)
    x = feature(rng, 3, 2, 4)
    r = rng.normal(size=(4, 3))
    for mp in range(3):
        zeroed = SO2LinearWeights(3, 3, 3, 2, 2, full.w0.copy(), [(a.copy(), b.copy()) for a, b in full.wm])
        for m in range(mp + 1, 4):
            a, b = zeroed.wm[m - 1]
            a[...] = 0.0
            b[...] = 0.0
        np.testing.assert_array_equal(
            escn_convolution(x, r, full.truncated(mp)), escn_convolution(x, r, zeroed)
        )

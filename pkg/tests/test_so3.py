import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import sph_harm_y

from equikernel import so3
from equikernel.errors import PreconditionError

finite = st.floats(-1.0, 1.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def sh_reference(d, lmax):
    """Real harmonics from scipy's complex ones, polar axis y, azimuth atan2(x, z)."""
    x, y, z = d
    theta = math.acos(max(-1.0, min(1.0, y)))
    phi = math.atan2(x, z)
    out = []
    for L in range(lmax + 1):
        scale = math.sqrt(4 * math.pi / (2 * L + 1))
        for m in range(-L, L + 1):
            Y = sph_harm_y(L, abs(m), theta, phi)
            if m == 0:
                v = Y.real
            elif m > 0:
                v = math.sqrt(2) * (-1) ** m * Y.real
            else:
                v = math.sqrt(2) * (-1) ** m * Y.imag
            out.append(scale * v)
    return np.array(out)


def wigner_by_fit(R, L, rng):
    """D^(L) from least squares on harmonics sampled at random points."""
    pts = rng.normal(size=(4 * (2 * L + 1), 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    sl = so3.degree_slice(L)
    A = so3.spherical_harmonics(pts, L)[:, sl]
    B = so3.spherical_harmonics(pts @ R.T, L)[:, sl]
    return np.linalg.lstsq(A, B, rcond=None)[0].T


def cg_nullspace(l1, l2, l3, rng, n_rot=4):
    """Intertwiners of (l1 x l2 -> l3) as the null space of stacked constraints."""
    rows = []
    n1, n2, n3 = 2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1
    for _ in range(n_rot):
        R = so3.random_rotation(rng)
        D1, D2, D3 = (wigner_by_fit(R, l, rng) for l in (l1, l2, l3))
        # (D1 x D2) C - C D3 = 0 on vec(C)
        left = np.kron(np.kron(D1, D2), np.eye(n3))
        right = np.kron(np.eye(n1 * n2), D3.T)
        rows.append(left - right)
    _, s, vt = np.linalg.svd(np.vstack(rows))
    null = vt[s.size - np.sum(s < 1e-8) :] if np.any(s < 1e-8) else vt[:0]
    return null.reshape(-1, n1, n2, n3), s


# ---------------------------------------------------------------- harmonics


def test_degree_zero_is_one(rng):
    d = unit(rng.normal(size=3))
    assert np.array_equal(so3.spherical_harmonics(d, 0), [1.0])


def test_y_axis_only_order_zero():
    Y = so3.spherical_harmonics([0.0, 1.0, 0.0], 4)
    expected = np.zeros(25)
    for L in range(5):
        expected[L * L + L] = 1.0
    np.testing.assert_allclose(Y, expected, atol=1e-15)


def test_matches_scipy_reference(rng):
    for _ in range(10):
        d = unit(rng.normal(size=3))
        np.testing.assert_allclose(so3.spherical_harmonics(d, 8), sh_reference(d, 8), atol=1e-12)


def test_degree_one_is_cartesian(rng):
    d = unit(rng.normal(size=3))
    np.testing.assert_allclose(so3.spherical_harmonics(d, 1)[1:], d, atol=1e-15)


def test_degree_norm_is_one(rng):
    d = rng.normal(size=(20, 3))
    Y = so3.spherical_harmonics(d / np.linalg.norm(d, axis=1, keepdims=True), 8)
    for L in range(9):
        np.testing.assert_allclose((Y[:, so3.degree_slice(L)] ** 2).sum(axis=1), 1.0, atol=1e-12)


def test_sh_rejects_bad_inputs():
    with pytest.raises(PreconditionError):
        so3.spherical_harmonics([1.0, 1.0, 0.0], 2)
    with pytest.raises(ValueError):
        so3.spherical_harmonics([1.0, 0.0, 0.0], -1)


@settings(max_examples=40, deadline=None)
@given(vec3, st.integers(0, 2**32 - 1))
def test_sh_equivariance_property(v, seed):
    d = unit(v)
    R = so3.random_rotation(np.random.default_rng(seed))
    lhs = so3.spherical_harmonics(R @ d, 6)
    rhs = so3.block_diagonal(R, 6) @ so3.spherical_harmonics(d, 6)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


# ---------------------------------------------------------------- Wigner-D


def test_identity_rotation():
    np.testing.assert_allclose(so3.wigner_d(np.eye(3), 5), np.eye(11), atol=1e-14)


def test_degree_one_equals_rotation(rng):
    R = so3.random_rotation(rng)
    v = rng.normal(size=3)
    np.testing.assert_allclose(so3.wigner_d(R, 1) @ v, R @ v, atol=1e-14)


def test_degree_zero_block(rng):
    assert so3.wigner_d(so3.random_rotation(rng), 0).tolist() == [[1.0]]


def test_homomorphism_and_orthogonality(rng):
    for _ in range(5):
        A, B = so3.random_rotation(rng), so3.random_rotation(rng)
        for L in (2, 4, 8):
            DA = so3.wigner_d(A, L)
            np.testing.assert_allclose(DA @ so3.wigner_d(B, L), so3.wigner_d(A @ B, L), atol=1e-10)
            np.testing.assert_allclose(DA @ DA.T, np.eye(2 * L + 1), atol=1e-10)


def test_matches_least_squares_fit(rng):
    R = so3.random_rotation(rng)
    for L in range(7):
        np.testing.assert_allclose(so3.wigner_d(R, L), wigner_by_fit(R, L, rng), atol=1e-10)


def test_rejects_improper_and_non_orthogonal():
    with pytest.raises(PreconditionError):
        so3.wigner_d(np.diag([1.0, 1.0, -1.0]), 2)
    with pytest.raises(PreconditionError):
        so3.wigner_d(np.eye(3) * 1.01, 2)


def test_packed_batch_matches_single(rng):
    Rs = np.stack([so3.random_rotation(rng) for _ in range(3)])
    blocks = so3.unpack_wigner(so3.wigner_packed(Rs, 4), 4)
    for i in range(3):
        for L in range(5):
            np.testing.assert_array_equal(blocks[L][i], so3.wigner_d(Rs[i], L))


# ---------------------------------------------------------------- Clebsch-Gordan


def test_selection_rule_zero():
    C = so3.clebsch_gordan(1, 1, 3)
    assert C.shape == (3, 3, 7) and not C.any()


def test_scalar_coupling_is_identity():
    for L in range(5):
        C = so3.clebsch_gordan(0, L, L)[0]
        np.testing.assert_allclose(C, np.eye(2 * L + 1) * C[0, 0], atol=1e-15)
        assert C[0, 0] > 0


def test_one_one_one_is_levi_civita():
    C = so3.clebsch_gordan(1, 1, 1)
    np.testing.assert_allclose(C, -np.swapaxes(C, 0, 1), atol=1e-15)
    eps = np.zeros((3, 3, 3))
    for (i, j, k), s in {(0, 1, 2): 1, (1, 2, 0): 1, (2, 0, 1): 1, (1, 0, 2): -1, (2, 1, 0): -1, (0, 2, 1): -1}.items():
        eps[i, j, k] = s
    ratio = C[C != 0] / eps[C != 0]
    np.testing.assert_allclose(ratio, ratio[0], atol=1e-15)
    assert np.array_equal(C != 0, eps != 0)


@pytest.mark.parametrize("l1,l2,l3", [(1, 1, 2), (2, 1, 1), (2, 2, 2), (1, 2, 3), (3, 2, 2)])
def test_matches_nullspace_oracle(l1, l2, l3, rng):
    null, _ = cg_nullspace(l1, l2, l3, rng)
    assert null.shape[0] == 1
    C = so3.clebsch_gordan(l1, l2, l3)
    overlap = np.sum(C * null[0]) / np.linalg.norm(C)
    assert abs(abs(overlap) - 1.0) < 1e-8


def test_intertwiner_identity(rng):
    for _ in range(3):
        R = so3.random_rotation(rng)
        D = [so3.wigner_d(R, L) for L in range(5)]
        for l1 in range(5):
            for l2 in range(5):
                for l3 in range(abs(l1 - l2), min(4, l1 + l2) + 1):
                    C = so3.clebsch_gordan(l1, l2, l3)
                    lhs = np.einsum("ai,bj,ijk->abk", D[l1], D[l2], C)
                    np.testing.assert_allclose(lhs, np.einsum("abc,ck->abk", C, D[l3]), atol=1e-10)


def test_orthonormal_output_slices():
    for l1 in range(4):
        for l2 in range(4):
            for l3 in range(abs(l1 - l2), l1 + l2 + 1):
                C = so3.clebsch_gordan(l1, l2, l3).reshape(-1, 2 * l3 + 1)
                np.testing.assert_allclose(C.T @ C, np.eye(2 * l3 + 1), atol=1e-12)
            # different output degrees are orthogonal
            for a in range(abs(l1 - l2), l1 + l2 + 1):
                for b in range(a + 1, l1 + l2 + 1):
                    Ca = so3.clebsch_gordan(l1, l2, a).reshape(-1, 2 * a + 1)
                    Cb = so3.clebsch_gordan(l1, l2, b).reshape(-1, 2 * b + 1)
                    np.testing.assert_allclose(Ca.T @ Cb, 0.0, atol=1e-12)


def test_sign_convention_first_nonzero_positive():
    for l1, l2, l3 in [(1, 1, 0), (2, 1, 3), (3, 3, 2), (4, 2, 4)]:
        C = so3.clebsch_gordan(l1, l2, l3).ravel()
        assert C[np.flatnonzero(C)[0]] > 0


def test_cg_is_read_only():
    with pytest.raises(ValueError):
        so3.clebsch_gordan(1, 1, 2)[0, 0, 0] = 1.0


def test_corruption_hook_breaks_and_restores(rng):
    R = so3.random_rotation(rng)
    good = so3.wigner_d(R, 3)
    so3.set_cg_corruption(True)
    try:
        assert so3.cg_corrupted()
        assert not np.allclose(so3.wigner_d(R, 3) @ so3.wigner_d(R, 3).T, np.eye(7), atol=1e-6)
    finally:
        so3.set_cg_corruption(False)
    np.testing.assert_array_equal(so3.wigner_d(R, 3), good)


# ---------------------------------------------------------------- alignment


def test_alignment_identity_and_antipode():
    np.testing.assert_array_equal(so3.alignment_rotation([0.0, 1.0, 0.0]), np.eye(3))
    np.testing.assert_array_equal(so3.alignment_rotation([0.0, -1.0, 0.0]), np.diag([1.0, -1.0, -1.0]))


def test_alignment_zero_vector():
    with pytest.raises(ValueError):
        so3.alignment_rotation([0.0, 0.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(vec3)
def test_alignment_maps_to_y(v):
    d = unit(v)
    R = so3.alignment_rotation(d)
    np.testing.assert_allclose(R @ d, [0.0, 1.0, 0.0], atol=1e-10)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12
    assert np.array_equal(so3.alignment_rotation(d.copy()), R)


def test_alignment_near_antipode():
    d = unit([1e-9, -1.0, 0.0])
    np.testing.assert_allclose(so3.alignment_rotation(d) @ d, [0.0, 1.0, 0.0], atol=1e-10)


def test_random_rotation_is_proper(rng):
    R = so3.random_rotation(rng)
    so3.check_rotation(R)

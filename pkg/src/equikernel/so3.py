r"""Real-basis SO(3) representation machinery.

Conventions used throughout the package:

* Irreps of degree ``L`` are stored with orders ``m = -L..L``; the flat index of
  ``(L, m)`` is ``L*L + L + m``.
* Real spherical harmonics use ``y`` as the polar axis and the azimuth measured
  in the ``z``-``x`` plane, i.e. the standard real form evaluated at
  ``(x', y', z') = (z, x, y)``. Each degree is Schmidt semi-normalised, so
  ``Y_{L,0}(y_hat) = 1`` and ``sum_m Y_{L,m}(r)^2 = 1`` for unit ``r``.
  Consequently ``Y^{(1)}(r) = (x, y, z)`` and ``D^{(1)}(R) = R``: the
  degree-1 basis ordering coincides with Cartesian ``(x, y, z)``.
* ``D^{(L)}(R)`` satisfies ``Y^{(L)}(R r) = D^{(L)}(R) Y^{(L)}(r)``.
* Clebsch-Gordan tensors ``C[m1, m2, m3]`` intertwine as
  ``sum_{m1,m2} D1[a,m1] D2[b,m2] C[m1,m2,m3] = sum_c C[a,b,c] D3[c,m3]``
  and have orthonormal output slices:
  ``sum_{m1,m2} C[m1,m2,m3] C[m1,m2,m3'] = delta_{m3 m3'}``.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import PreconditionError

LMAX_SUPPORTED = 10
UNIT_TOL = 1e-9
ROTATION_TOL = 1e-9
ANTIPODE_EPS = 1e-12

_CG_CORRUPTED = False


def num_components(lmax: int) -> int:
    """Flat length ``(lmax + 1)**2`` of one channel."""
    return (lmax + 1) ** 2


def degree_slice(L: int) -> slice:
    return slice(L * L, (L + 1) * (L + 1))


# --------------------------------------------------------------------------
# Clebsch-Gordan coefficients
# --------------------------------------------------------------------------


def _complex_cg(j1: int, m1: int, j2: int, m2: int, j3: int, m3: int) -> float:
    """Condon-Shortley coefficient <j1 m1 j2 m2 | j3 m3> via Racah's formula."""
    if m1 + m2 != m3:
        return 0.0
    if not (abs(j1 - j2) <= j3 <= j1 + j2):
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    f = math.factorial
    pre = Fraction(
        (2 * j3 + 1) * f(j3 + j1 - j2) * f(j3 - j1 + j2) * f(j1 + j2 - j3),
        f(j1 + j2 + j3 + 1),
    )
    pre *= (
        f(j3 + m3) * f(j3 - m3) * f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2)
    )
    total = Fraction(0)
    kmin = max(0, j2 - j3 - m1, j1 - j3 + m2)
    kmax = min(j1 + j2 - j3, j1 - m1, j2 + m2)
    for k in range(kmin, kmax + 1):
        den = (
            f(k)
            * f(j1 + j2 - j3 - k)
            * f(j1 - m1 - k)
            * f(j2 + m2 - k)
            * f(j3 - j2 + m1 + k)
            * f(j3 - j1 - m2 + k)
        )
        total += Fraction((-1) ** k, den)
    return float(total) * math.sqrt(float(pre))


@lru_cache(maxsize=None)
def _real_to_complex(L: int) -> np.ndarray:
    """Unitary ``U`` with ``Y_real = U @ Y_complex`` (rows real m, cols complex m)."""
    n = 2 * L + 1
    U = np.zeros((n, n), dtype=np.complex128)
    s = 1 / math.sqrt(2)
    U[L, L] = 1.0
    for m in range(1, L + 1):
        # real +m row
        U[L + m, L - m] = s
        U[L + m, L + m] = (-1) ** m * s
        # real -m row
        U[L - m, L - m] = 1j * s
        U[L - m, L + m] = -1j * (-1) ** m * s
    return U


@lru_cache(maxsize=None)
def _clebsch_gordan_cached(l1: int, l2: int, l3: int, corrupted: bool) -> np.ndarray:
    shape = (2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1)
    if not (abs(l1 - l2) <= l3 <= l1 + l2):
        out = np.zeros(shape)
        out.setflags(write=False)
        return out
    cc = np.zeros(shape)
    for m1 in range(-l1, l1 + 1):
        for m2 in range(-l2, l2 + 1):
            m3 = m1 + m2
            if abs(m3) <= l3:
                cc[l1 + m1, l2 + m2, l3 + m3] = _complex_cg(l1, m1, l2, m2, l3, m3)
    U1, U2, U3 = _real_to_complex(l1), _real_to_complex(l2), _real_to_complex(l3)
    c = np.einsum("ai,bj,ck,ijk->abc", U1.conj(), U2.conj(), U3, cc)
    # depending on the parity of l1 + l2 + l3 the result is purely real or purely imaginary
    c = c.real if np.abs(c.real).max() >= np.abs(c.imag).max() else c.imag
    c = np.ascontiguousarray(c)
    c[np.abs(c) < 1e-14] = 0.0
    flat = c.reshape(-1)
    first = flat[np.flatnonzero(flat)[0]]
    if first < 0:
        c = -c
    if corrupted:
        # deliberate defect used by the equivariance audit to prove it can fail
        flat = c.reshape(-1)
        flat[np.flatnonzero(flat)[0]] *= -1.0
    c.setflags(write=False)
    return c


def clebsch_gordan(l1: int, l2: int, l3: int) -> np.ndarray:
    """Real-basis Clebsch-Gordan tensor indexed ``[m1, m2, m3]``.

    All zeros unless ``|l1 - l2| <= l3 <= l1 + l2``. The global sign is fixed
    so that the first nonzero entry in C order is positive. The returned array
    is cached and read-only.
    """
    for v in (l1, l2, l3):
        if int(v) != v or v < 0:
            raise ValueError(f"degrees must be non-negative integers, got {(l1, l2, l3)}")
    return _clebsch_gordan_cached(int(l1), int(l2), int(l3), _CG_CORRUPTED)


def set_cg_corruption(flag: bool) -> None:
    """Toggle a deliberate CG defect (test hook for the equivariance audit)."""
    global _CG_CORRUPTED
    _CG_CORRUPTED = bool(flag)
    _wigner_tables.cache_clear()


def cg_corrupted() -> bool:
    return _CG_CORRUPTED


# --------------------------------------------------------------------------
# Spherical harmonics
# --------------------------------------------------------------------------


def _check_lmax(lmax: int) -> int:
    if int(lmax) != lmax or lmax < 0:
        raise ValueError(f"lmax must be a non-negative integer, got {lmax}")
    if lmax > LMAX_SUPPORTED:
        raise ValueError(f"lmax > {LMAX_SUPPORTED} is not supported")
    return int(lmax)


def _check_unit(directions: np.ndarray) -> None:
    norms = np.linalg.norm(directions, axis=-1)
    if not np.all(np.abs(norms - 1.0) <= UNIT_TOL):
        raise PreconditionError("direction must be a unit vector (|norm - 1| <= 1e-9)")


@lru_cache(maxsize=None)
def _sh_norms(lmax: int) -> np.ndarray:
    out = np.ones(num_components(lmax))
    for L in range(lmax + 1):
        for m in range(1, L + 1):
            v = math.sqrt(2.0 * math.factorial(L - m) / math.factorial(L + m))
            out[L * L + L + m] = v
            out[L * L + L - m] = v
    out.setflags(write=False)
    return out


def spherical_harmonics(direction, lmax: int) -> np.ndarray:
    """Real spherical harmonics ``Y^{(0..lmax)}`` of one or many unit vectors.

    ``direction`` has shape ``(3,)`` or ``(N, 3)``; the result has shape
    ``((lmax+1)**2,)`` or ``(N, (lmax+1)**2)``.
    """
    lmax = _check_lmax(lmax)
    d = np.asarray(direction, dtype=np.float64)
    if d.shape[-1] != 3:
        raise ValueError("direction must have trailing dimension 3")
    single = d.ndim == 1
    d2 = np.ascontiguousarray(d.reshape(-1, 3))
    _check_unit(d2)
    out = kernels.spherical_harmonics(d2, lmax, _sh_norms(lmax))
    return out[0] if single else out


# --------------------------------------------------------------------------
# Rotations and Wigner-D matrices
# --------------------------------------------------------------------------


def check_rotation(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise PreconditionError("rotation must be a 3x3 matrix")
    eye = np.eye(3)
    orth = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max() if R.size else 0.0
    if orth > ROTATION_TOL:
        raise PreconditionError(f"rotation is not orthogonal (error {orth:.2e})")
    if R.size and np.abs(np.linalg.det(R) - 1.0).max() > ROTATION_TOL:
        raise PreconditionError("rotation must have determinant +1")
    return R


@lru_cache(maxsize=None)
def _wigner_tables(lmax: int):
    """Sparse rows of the (L-1) x 1 -> L coupling used by the Wigner recursion.

    Row ``L*L + a`` lists ``(p1, p2, value)`` triples with
    ``value = C^{(L-1,1,L)}[p1, p2, a]``, zero-padded to a common width.
    """
    K = num_components(lmax)
    rows: list[list[tuple[int, int, float]]] = [[] for _ in range(K)]
    for L in range(2, lmax + 1):
        C = clebsch_gordan(L - 1, 1, L)
        for a in range(2 * L + 1):
            nz = np.argwhere(C[:, :, a] != 0.0)
            rows[L * L + a] = [(int(p1), int(p2), float(C[p1, p2, a])) for p1, p2 in nz]
    width = max([len(r) for r in rows] + [1])
    p1 = np.zeros((K, width), dtype=np.int64)
    p2 = np.zeros((K, width), dtype=np.int64)
    val = np.zeros((K, width))
    for i, r in enumerate(rows):
        for k, (a, b, v) in enumerate(r):
            p1[i, k], p2[i, k], val[i, k] = a, b, v
    for arr in (p1, p2, val):
        arr.setflags(write=False)
    return p1, p2, val


def wigner_offsets(lmax: int) -> np.ndarray:
    """Start offsets of each degree block in a packed Wigner array."""
    sizes = [(2 * L + 1) ** 2 for L in range(lmax + 1)]
    return np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)


def wigner_packed(rotations, lmax: int, validate: bool = True) -> np.ndarray:
    """Packed Wigner blocks for a batch of rotations, shape ``(N, sum (2L+1)^2)``."""
    lmax = _check_lmax(lmax)
    R = np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
    if validate:
        check_rotation(R)
    p1, p2, val = _wigner_tables(lmax)
    return kernels.wigner_packed(np.ascontiguousarray(R), lmax, p1, p2, val)


def unpack_wigner(packed: np.ndarray, lmax: int) -> list[np.ndarray]:
    """Split a packed Wigner array into per-degree ``(N, 2L+1, 2L+1)`` views."""
    off = wigner_offsets(lmax)
    return [
        packed[..., off[L] : off[L + 1]].reshape(packed.shape[:-1] + (2 * L + 1, 2 * L + 1))
        for L in range(lmax + 1)
    ]


def wigner_d(rotation, L: int) -> np.ndarray:
    """The ``(2L+1) x (2L+1)`` Wigner-D block of one rotation."""
    if int(L) != L or L < 0:
        raise ValueError(f"L must be a non-negative integer, got {L}")
    R = check_rotation(rotation)
    if R.shape != (3, 3):
        raise PreconditionError("wigner_d expects a single 3x3 rotation")
    return unpack_wigner(wigner_packed(R, L, validate=False), L)[L][0].copy()


def block_diagonal(rotation, lmax: int) -> np.ndarray:
    """Dense block-diagonal ``D(R)`` acting on a flat ``(lmax+1)**2`` vector."""
    blocks = unpack_wigner(wigner_packed(rotation, lmax), lmax)
    K = num_components(lmax)
    out = np.zeros((K, K))
    for L, b in enumerate(blocks):
        out[degree_slice(L), degree_slice(L)] = b[0]
    return out


def _minimal_rotation(r: np.ndarray) -> np.ndarray:
    """Rodrigues rotation taking unit rows ``r`` to ``+y``, valid away from ``-y``."""
    x, c, z = r[:, 0], r[:, 1], r[:, 2]
    # v = r x y_hat = (-z, 0, x); K is its cross-product matrix
    zero = np.zeros_like(c)
    K = np.stack(
        [
            np.stack([zero, -x, zero], axis=-1),
            np.stack([x, zero, z], axis=-1),
            np.stack([zero, -z, zero], axis=-1),
        ],
        axis=-2,
    )
    # 1 + c without cancellation when c is near -1
    s2 = x * x + z * z
    one_plus_c = np.where(c >= 0.0, 1.0 + c, s2 / np.where(c >= 0.0, 1.0, 1.0 - c))
    one_plus_c = np.where(one_plus_c > 0.0, one_plus_c, 1.0)
    return np.eye(3) + K + (K @ K) / one_plus_c[:, None, None]


_FLIP_X = np.diag([1.0, -1.0, -1.0])


def alignment_rotation(relative_direction) -> np.ndarray:
    """Rotation ``R`` with ``R @ r_hat = (0, 1, 0)``.

    Minimal-angle rotation about ``r_hat x y_hat``. Near the antipode
    (``r_hat . y_hat < -1 + 1e-12``) the rotation by pi about ``x`` is applied
    first and followed by the (tiny) minimal rotation of the flipped vector,
    so exactly ``-y`` maps through ``diag(1, -1, -1)``.
    Accepts ``(3,)`` or ``(N, 3)`` unit vectors.
    """
    r = np.asarray(relative_direction, dtype=np.float64)
    single = r.ndim == 1
    r2 = r.reshape(-1, 3)
    norms = np.linalg.norm(r2, axis=-1)
    if np.any(norms == 0.0):
        raise ValueError("alignment direction has zero length")
    _check_unit(r2)
    antipode = r2[:, 1] < -1.0 + ANTIPODE_EPS
    out = _minimal_rotation(np.where(antipode[:, None], r2 @ _FLIP_X, r2))
    out[antipode] = out[antipode] @ _FLIP_X
    return out[0] if single else out


def y_rotation(angle: float) -> np.ndarray:
    """Rotation by ``angle`` about the ``y`` axis."""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a random unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )

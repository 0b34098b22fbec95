"""Backend selection for the hot kernels.

Numba is used when importable unless ``EQUIKERNEL_NUMBA=0`` is set in the
environment before import. Every kernel in :mod:`equikernel.kernels` has a
pure-numpy twin, so the package works without numba.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("EQUIKERNEL_NUMBA", "1").strip().lower()

try:
    if _FLAG in ("0", "false", "no", "off"):
        raise ImportError("numba disabled by EQUIKERNEL_NUMBA")
    import numba

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def set_num_threads(n: int | None) -> None:
    """Set the numba thread pool size (ignored on the numpy path)."""
    if n is None or not HAS_NUMBA:
        return
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def resolve_threads(n: int | None) -> int | None:
    if n is not None:
        return n
    env = os.environ.get("EQUIKERNEL_THREADS")
    return int(env) if env else None

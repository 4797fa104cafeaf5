"""Numba dispatch.

Hot kernels are written once as plain loops and compiled with ``numba.njit``
when available. Setting ``DEPTHPROMPT_DISABLE_NUMBA=1`` selects the pure-numpy
fallback paths instead (useful for debugging and for the benchmark).
"""
from __future__ import annotations

import os

_FLAG = "DEPTHPROMPT_DISABLE_NUMBA"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False


def numba_enabled() -> bool:
    """True unless numba is missing or disabled through the env flag."""
    if not HAVE_NUMBA:
        return False
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


def resolve_backend(backend: str | None) -> str:
    if backend is None:
        return "numba" if numba_enabled() else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def njit(fn):
    """``numba.njit(cache=False)`` when numba is importable, identity otherwise.

    fastmath stays off: kernels must match the numpy path bit for bit.
    """
    if HAVE_NUMBA:
        return numba.njit(cache=False, fastmath=False)(fn)
    return fn

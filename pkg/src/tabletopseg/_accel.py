"""Optional numba acceleration for the hot kernels.

Every kernel in this package has a numba version and a pure-numpy version.
The numba path is used when numba imports and ``TABLETOPSEG_NO_NUMBA`` is
unset (or set to ``0``). Both paths are always importable so the benchmark
and the parity tests can call either one explicitly.
"""
from __future__ import annotations

import logging
import os

logger = logging.getLogger(__name__)

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is installed in CI
    numba = None
    HAVE_NUMBA = False
    logger.debug("numba not importable, using numpy kernels")

_flag = os.environ.get("TABLETOPSEG_NO_NUMBA", "").strip().lower()
USE_NUMBA = HAVE_NUMBA and _flag in ("", "0", "false", "no")


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op decorator."""
    if not HAVE_NUMBA:
        def wrap(func):
            return func
        if args and callable(args[0]):
            return args[0]
        return wrap
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return numba.njit(*args, **kwargs)


def resolve_backend(backend: str | None) -> str:
    """Map ``None``/``"auto"`` to the active backend; validate explicit names."""
    if backend is None or backend == "auto":
        return "numba" if USE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend

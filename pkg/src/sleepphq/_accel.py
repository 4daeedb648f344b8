"""Numba dispatch switch.

Set ``SLEEPPHQ_DISABLE_NUMBA=1`` before import to force the pure-numpy
kernels. Numba is also skipped silently when it cannot be imported.
"""

import os

_FLAG = "SLEEPPHQ_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_DISABLED = os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}
USE_NUMBA = numba is not None and not NUMBA_DISABLED


def njit(func):
    """Compile ``func`` with ``numba.njit(cache=True)`` when numba is importable.

    The uncompiled function is kept as ``func.py_func`` either way so callers
    can reach the interpreted loop.
    """
    if numba is None:
        func.py_func = func
        return func
    return numba.njit(cache=True)(func)

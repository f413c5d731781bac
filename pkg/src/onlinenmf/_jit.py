"""Numba switch.

Set ``ONLINENMF_DISABLE_JIT=1`` to route every hot kernel through its
pure-numpy implementation instead of the compiled one.  The numpy path is
also used automatically when numba cannot be imported.
"""

import os

_FLAG = os.environ.get("ONLINENMF_DISABLE_JIT", "").strip().lower()
JIT_REQUESTED = _FLAG not in ("1", "true", "yes", "on")

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f
        return wrapper

JIT_ENABLED = JIT_REQUESTED and HAS_NUMBA

"""Kernel backend selection.

Hot kernels are compiled with numba when it is importable. Setting
``POOLPREV_DISABLE_NUMBA=1`` forces the pure-numpy implementations, which is
useful for debugging and for checking the two paths against each other.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("POOLPREV_DISABLE_NUMBA", "").strip().lower() in _FALSY


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

"""numba switch.

Set ``VOSUB_NO_NUMBA=1`` before import to force the pure-numpy kernels.
"""

import os

_flag = os.environ.get("VOSUB_NO_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _flag not in ("1", "true", "yes", "on")


def njit(f=None, **options):
    """``numba.njit`` when available, identity otherwise."""
    options.setdefault("cache", True)
    if not HAVE_NUMBA:
        return f if f is not None else (lambda g: g)
    if f is None:
        return lambda g: numba.njit(g, **options)
    return numba.njit(f, **options)


def backend():
    return "numba" if USE_NUMBA else "numpy"

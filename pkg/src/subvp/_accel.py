"""Backend selection for the hot numeric kernels.

Kernels are compiled with numba when it is importable, unless the environment
variable ``SUBVP_DISABLE_NUMBA`` is set to a truthy value, in which case the
pure-numpy implementations are used everywhere.
"""

import functools
import os

_FLAG = os.environ.get("SUBVP_DISABLE_NUMBA", "").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if DISABLED:
        raise ImportError
    import numba as _nb
except ImportError:
    _nb = None

HAVE_NUMBA = _nb is not None


def njit(func=None, **options):
    """``numba.njit`` with caching; the plain function when numba is off."""
    if func is None:
        return functools.partial(njit, **options)
    if _nb is None:
        return func
    return _nb.njit(cache=True, nogil=True, **options)(func)


def backend():
    return "numba" if HAVE_NUMBA else "numpy"

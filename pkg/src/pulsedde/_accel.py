"""Optional numba acceleration.

Set ``PULSEDDE_DISABLE_NUMBA=1`` before import to run every kernel as plain
Python/numpy. The kernels are written in the numba-compatible subset so both
paths execute the same source.
"""
import os

_FLAG = "PULSEDDE_DISABLE_NUMBA"

DISABLED = os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if DISABLED:
        raise ImportError("numba disabled by " + _FLAG)
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False

# fastmath stays off: zero times and switch times must be reproducible
KERNEL_OPTS = {"cache": True, "nogil": True, "fastmath": False}


def kernel(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if HAVE_NUMBA:
        compiled = _njit(**KERNEL_OPTS)(fn)
        return compiled
    return fn


def backend() -> str:
    return "numba" if HAVE_NUMBA else "python"

"""Backend selection for the hot numeric kernels.

Set ``MOTIONCLOUD_NUMBA=0`` in the environment to force the pure-numpy
path. When numba is missing the numpy path is used automatically.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None


def _flag_enabled():
    value = os.environ.get("MOTIONCLOUD_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off")


HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and _flag_enabled()


def njit(func):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    if numba is None:
        return func
    return numba.njit(cache=True)(func)


def backend():
    return "numba" if USE_NUMBA else "numpy"

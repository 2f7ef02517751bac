"""Backend selection for the numeric kernels.

Kernels come in two flavours: a numba ``@njit`` loop and a vectorised numpy
path. Numba is used when it imports and ``NULLBOOST_DISABLE_NUMBA`` is unset
(or ``0``). Both paths compute the same quantities; tests compare them.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

_FLAG = "NULLBOOST_DISABLE_NUMBA"

HAVE_NUMBA = numba is not None
_use_numba = HAVE_NUMBA and os.environ.get(_FLAG, "0").lower() in ("", "0", "false", "no")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrap(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


def use_numba():
    return _use_numba


def set_backend(name):
    """Switch between ``"numba"`` and ``"numpy"`` at runtime."""
    global _use_numba
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend():
    return "numba" if _use_numba else "numpy"

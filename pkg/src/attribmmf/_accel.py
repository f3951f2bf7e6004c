"""Numba switch.

Hot kernels are written once as plain Python loops and compiled with
``numba.njit`` when available. Setting ``ATTRIBMMF_DISABLE_NUMBA=1`` (or
running without numba installed) selects the vectorised numpy fallbacks
instead; callers check :data:`USE_NUMBA` to pick a path.
"""
import logging
import os

logger = logging.getLogger(__name__)

_DISABLED = os.environ.get("ATTRIBMMF_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("disabled by ATTRIBMMF_DISABLE_NUMBA")
    from numba import njit, prange, set_num_threads, get_num_threads

    USE_NUMBA = True
except ImportError as exc:  # pragma: no cover - exercised via env flag in CI
    logger.debug("numba unavailable: %s", exc)
    USE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap

    prange = range

    def set_num_threads(n):
        return None

    def get_num_threads():
        return 1


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

"""Numba switch.

Set ``PLAE_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is read
once at import time; numba's own ``NUMBA_DISABLE_JIT`` is honoured as well.
"""

import os
import warnings

_FLAG = os.environ.get("PLAE_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG not in ("", "0", "false", "no")

try:
    import numba
    from numba import njit

    HAVE_NUMBA = not numba.config.DISABLE_JIT
except ImportError:  # pragma: no cover - numba ships in the default env
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def identity(fn):
            return fn

        return identity

    warnings.warn("numba not found; falling back to numpy kernels")

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"

"""JIT shim: real ``numba.njit`` when enabled, identity decorator otherwise.

Kept in its own module so that :mod:`flipfree.kernels.scalar` and the package
``__init__`` agree on a single decision without importing each other.
"""

import os

_requested = os.environ.get("FLIPFREE_KERNELS", "").strip().lower()

NUMBA_ON = False
if _requested != "numpy":
    try:
        from numba import njit, prange  # noqa: F401

        NUMBA_ON = True
    except ImportError:
        NUMBA_ON = False

if not NUMBA_ON:

    def njit(*args, **kwargs):  # noqa: F811
        """No-op stand-in so decorated functions run as plain Python."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap

    prange = range  # noqa: F811

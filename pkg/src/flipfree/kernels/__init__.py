"""Per-element numerical kernels with two interchangeable batch backends.

The hot loops of the solver run over all mesh elements every iteration.  Two
implementations are provided:

* ``batch_numba`` -- ``numba.njit(parallel=True)`` loops over the scalar
  kernels in :mod:`flipfree.kernels.scalar`.
* ``batch_numpy`` -- pure-NumPy vectorised equivalents, used when numba is
  unavailable or explicitly disabled.

Backend selection happens once at import time via the ``FLIPFREE_KERNELS``
environment variable: ``"numba"`` (default when importable) or ``"numpy"``.
"""

import os

_requested = os.environ.get("FLIPFREE_KERNELS", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        "FLIPFREE_KERNELS must be 'numba' or 'numpy', got %r" % _requested
    )

from ._jit import NUMBA_ON as NUMBA_AVAILABLE

if _requested == "numba" and not NUMBA_AVAILABLE:
    raise RuntimeError("FLIPFREE_KERNELS=numba but numba is not importable")

#: Name of the batch backend actually in use.
ACTIVE_BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"

if ACTIVE_BACKEND == "numba":
    from . import batch_numba as batch
else:
    from . import batch_numpy as batch

from . import scalar  # noqa: E402  (after backend resolution on purpose)

__all__ = ["ACTIVE_BACKEND", "NUMBA_AVAILABLE", "batch", "scalar"]

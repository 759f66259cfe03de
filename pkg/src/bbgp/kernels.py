"""Backend selection for the ragged-sum kernel.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Setting ``BBGP_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("BBGP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"

# column indices of the ragged_sums result
LOG, INV, U_INV, INV2, U_INV2, U2_INV2 = range(6)


def ragged_sums(base, step, count, order=2, backend=None):
    """Sums over ``t_u = base + u*step``, ``u < count``, one row per entry.

    ``order=0`` returns only the log column (shape ``(n, 1)``); otherwise
    the six columns indexed by ``LOG .. U2_INV2``.
    """
    base, step, count = np.broadcast_arrays(np.asarray(base, dtype=np.float64),
                                            np.asarray(step, dtype=np.float64),
                                            np.asarray(count, dtype=np.int64))
    base = np.ascontiguousarray(base.ravel())
    step = np.ascontiguousarray(step.ravel())
    count = np.ascontiguousarray(count.ravel())
    if np.any(count < 0):
        raise ValueError("negative term count")
    backend = backend or BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not available")
        return _compiled.ragged_sums(base, step, count, order)
    if backend == "python":
        return _kernels_py.ragged_sums(base, step, count, order)
    raise ValueError(f"unknown backend {backend!r}")

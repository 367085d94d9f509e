"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``SCOREUQ_DISABLE_NUMBA=1``
to force the numpy implementations (also used automatically when numba is
not importable). Both implementations stay importable as
``scoreuq.kernels.numpy_impl`` and ``scoreuq.kernels.numba_impl`` so they
can be compared directly.
"""

import importlib
import os

from . import numpy_impl

_disabled = os.environ.get("SCOREUQ_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

numba_impl = None
if not _disabled:
    try:
        numba_impl = importlib.import_module(".numba_impl", __name__)
    except ImportError:  # pragma: no cover - numba is optional
        numba_impl = None

if numba_impl is not None:
    BACKEND = "numba"
    _impl = numba_impl
else:
    BACKEND = "numpy"
    _impl = numpy_impl

splitmix_fill_uniform = _impl.splitmix_fill_uniform
pair_distance_sum = _impl.pair_distance_sum
gmm_stats = _impl.gmm_stats


def get_impl(name):
    """Return the kernel module for ``"numba"`` or ``"numpy"``."""
    if name == "numpy":
        return numpy_impl
    if name == "numba":
        if numba_impl is None:
            raise RuntimeError("numba backend unavailable (not installed or disabled)")
        return numba_impl
    raise ValueError(f"unknown kernel backend {name!r}")


__all__ = [
    "BACKEND",
    "get_impl",
    "gmm_stats",
    "numba_impl",
    "numpy_impl",
    "pair_distance_sum",
    "splitmix_fill_uniform",
]

"""Kernel backend selection.

The hot inner loops (per-class similarity maps, k-means assignment) exist
twice: a numba-jitted version and a pure-numpy one.  ``IER_BACKEND=numpy``
forces the fallback; anything else uses numba when it imports cleanly.
"""

import os

from . import _kernels_numpy


def _pick():
    name = os.environ.get("IER_BACKEND", "numba").strip().lower()
    if name == "numpy":
        return "numpy", _kernels_numpy
    try:
        from . import _kernels_numba
        return "numba", _kernels_numba
    except ImportError:
        return "numpy", _kernels_numpy


BACKEND_NAME, _impl = _pick()

class_sim_maps = _impl.class_sim_maps
kmeans_assign = _impl.kmeans_assign


def get_backend(name):
    """Explicit backend lookup, used by the benchmark and backend tests."""
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        from . import _kernels_numba
        return _kernels_numba
    raise ValueError(f"unknown backend {name!r}")

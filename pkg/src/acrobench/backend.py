"""Kernel backend selection.

Hot numeric kernels (the Acrobot integrator) have two implementations: a
numba ``@njit`` version and a vectorized pure-numpy fallback. The numba path
is used whenever numba imports cleanly; set ``ACROBENCH_NUMBA=0`` (or
``false``/``off``/``no``) to force the numpy path. ``benchmarks/bench_backends.py``
times both.
"""

import os

_FALSEY = {"0", "false", "off", "no"}


def numba_requested() -> bool:
    return os.environ.get("ACROBENCH_NUMBA", "1").strip().lower() not in _FALSEY


try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and numba_requested()


def backend_name() -> str:
    """Name of the active kernel backend, for logs and benchmark output."""
    return "numba" if USE_NUMBA else "numpy"

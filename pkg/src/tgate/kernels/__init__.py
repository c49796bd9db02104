"""Backend selection for the hot numeric kernels.

The environment variable ``TGATE_BACKEND`` picks the implementation:

* ``numba`` (default when numba imports) - JIT-compiled loops, shot
  ensembles and trajectory extraction run across cores.
* ``numpy`` - pure-numpy fallback, identical algorithms.

Both backends satisfy the same tolerances; results agree to integrator
accuracy but are not guaranteed bit-identical across backends.  Within a
backend every kernel is deterministic.  ``benchmarks/bench_backends.py``
compares the two.
"""

from __future__ import annotations

import os

BACKEND_ENV = "TGATE_BACKEND"

_impl = None
_name = None


def _resolve(name: str | None):
    if name in (None, ""):
        try:
            from . import numba_impl
            return "numba", numba_impl
        except ImportError:
            from . import numpy_impl
            return "numpy", numpy_impl
    if name == "numba":
        from . import numba_impl
        return "numba", numba_impl
    if name == "numpy":
        from . import numpy_impl
        return "numpy", numpy_impl
    raise ValueError(f"unknown {BACKEND_ENV} value {name!r}; use numba|numpy")


def _get():
    global _impl, _name
    if _impl is None:
        _name, _impl = _resolve(os.environ.get(BACKEND_ENV))
    return _impl


def backend() -> str:
    """Name of the active backend."""
    _get()
    return _name


def set_backend(name: str | None):
    """Switch backend programmatically (used by tests and the benchmark)."""
    global _impl, _name
    _name, _impl = _resolve(name)


def ms_propagate(*args, **kwargs):
    return _get().ms_propagate(*args, **kwargs)


def ms_propagate_ensemble(*args, **kwargs):
    return _get().ms_propagate_ensemble(*args, **kwargs)


def find_minima(*args, **kwargs):
    return _get().find_minima(*args, **kwargs)


STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_MAXSTEPS = 2

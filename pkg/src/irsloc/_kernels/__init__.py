"""Hot-loop kernels with a compiled core and a pure-numpy fallback.

The Cython extension `_core` is preferred when it was built; otherwise (or
when the environment variable ``IRSLOC_PURE_PYTHON`` is set) the numpy
reference implementation `_ref` is used.  Both expose the same two entry
points with identical semantics:

* ``gn_localize_batch`` -- damped Gauss-Newton trilateration over a batch,
* ``association_scan``  -- exhaustive minimum-cost scan over permutation
  triples.
"""

import os

from . import _ref

if os.environ.get("IRSLOC_PURE_PYTHON"):
    _impl = _ref
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _ref

gn_localize_batch = _impl.gn_localize_batch
association_scan = _impl.association_scan


def backend() -> str:
    """Name of the active kernel backend: ``"native"`` or ``"python"``."""
    return "python" if _impl is _ref else "native"

"""Hot inner-loop kernels with a compiled core and a numpy fallback.

The compiled extension (``neurostage._kernels._core``) is built from Cython
at install time; when it is missing the pure-numpy implementations in
``_pyfallback`` are used instead.  Both backends produce bit-identical
results: the kernels are restricted to data movement, boolean work and
fixed-order accumulation, while every floating-point matmul stays in numpy
regardless of backend.

Selection happens once at import.  Set ``NEUROSTAGE_BACKEND=python`` to
force the fallback (used by the benchmark), or ``NEUROSTAGE_BACKEND=compiled``
to fail loudly when the extension is unavailable.
"""

import os

from . import _pyfallback

_requested = os.environ.get("NEUROSTAGE_BACKEND", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise ValueError(f"NEUROSTAGE_BACKEND must be 'compiled' or 'python', got {_requested!r}")

_impl = None
if _requested in ("auto", "compiled"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise
if _impl is None:
    _impl = _pyfallback

BACKEND = "python" if _impl is _pyfallback else "compiled"

flood_fill = _impl.flood_fill
im2col = _impl.im2col
col2im = _impl.col2im
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward


def available_backends():
    """Map of backend name -> kernel module, for tests and benchmarks."""
    out = {"python": _pyfallback}
    try:
        from . import _core

        out["compiled"] = _core
    except ImportError:
        pass
    return out

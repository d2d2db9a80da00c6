"""Backend selection for the hot kernels.

The compiled extension is used when it was built and ``REBELHAD_PURE_PYTHON``
is unset; otherwise the numpy fallback is used. Both expose the same
functions and produce identical results.
"""
import os

from . import _kernels_py

if os.environ.get("REBELHAD_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND
splitmix64_fill = _impl.splitmix64_fill
im2col = _impl.im2col
col2im = _impl.col2im
box_blur = _impl.box_blur
jacobi_eigh = _impl.jacobi_eigh


def available_backends():
    """Map backend name to module for every backend importable here."""
    found = {"numpy": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found

"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
``NEURAL_GALERKIN_PURE_PYTHON`` environment variable is set to a non-empty
value other than ``0``, the numpy implementations are used instead.
"""

import os

from . import _pykernels

_force_python = os.environ.get("NEURAL_GALERKIN_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_python:
        raise ImportError("pure-python backend requested")
    from . import _kernels as _impl
    BACKEND = "compiled"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

cholesky = _impl.cholesky
cho_solve = _impl.cho_solve
householder_r = _impl.householder_r
jacobi_svd = _impl.jacobi_svd
fft_radix2 = _impl.fft_radix2
double_well_load = _impl.double_well_load
stream_tanh_forward = _impl.stream_tanh_forward
stream_tanh_backward = _impl.stream_tanh_backward


def backends():
    """Return the importable kernel modules keyed by backend name."""
    out = {"python": _pykernels}
    try:
        from . import _kernels
        out["compiled"] = _kernels
    except ImportError:
        pass
    return out

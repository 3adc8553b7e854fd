"""Assembly kernels: compiled extension when available, numpy otherwise.

Set ``FIELDRECON_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _pykernels

if os.environ.get("FIELDRECON_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

hex_batch = _impl.hex_batch
quad_batch = _impl.quad_batch
scatter_add = _impl.scatter_add


def backend_module(name):
    """Return the kernel module for ``"python"`` or ``"cython"`` (for benchmarks/tests)."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")

"""Select the compiled kernels when available, else the pure-Python ones.

Set ``ECMSKETCH_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

if os.environ.get("ECMSKETCH_PURE_PYTHON") == "1":
    _impl = None
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = None

if _impl is None:
    _impl = _pykernels
    IMPLEMENTATION = "python"
else:
    IMPLEMENTATION = "cython"

EHCore = _impl.EHCore
DWCore = _impl.DWCore
row_indices = _impl.row_indices
splitmix64 = _pykernels.splitmix64
trailing_zeros = _pykernels.trailing_zeros
NO_TIME = _pykernels.NO_TIME


def available():
    """Names of kernel implementations importable in this environment."""
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names


def get(name):
    """Kernel module by name ('python' or 'cython')."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel implementation {name!r}")

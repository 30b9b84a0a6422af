"""Kernel backend selection.

The compiled extension is used when importable. Setting the environment
variable ``HDRRADAR_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _pykernels as py

if os.environ.get("HDRRADAR_PURE_PYTHON", "") not in ("", "0"):
    _impl = py
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = py

BACKEND = _impl.BACKEND
lcb_forward = _impl.lcb_forward
lcb_backward = _impl.lcb_backward
box_sums = _impl.box_sums


def backend_modules():
    """Every importable backend, keyed by name (for tests and benchmarks)."""
    mods = {"numpy": py}
    try:
        from . import _ckernels
        mods["cython"] = _ckernels
    except ImportError:
        pass
    return mods

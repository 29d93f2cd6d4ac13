"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when
``OSAD_PURE_PYTHON=1`` is set, the pure-Python kernels are used.
"""
import os

from . import _pykernels

if os.environ.get("OSAD_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"

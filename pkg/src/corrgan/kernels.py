"""Backend selection for the corruption kernels.

The compiled extension is used when importable; set ``CORRGAN_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _kernels_py

if os.environ.get("CORRGAN_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "numpy" if _impl is _kernels_py else "cython"

plasma_fill = _impl.plasma_fill
brightness_hsv = _impl.brightness_hsv

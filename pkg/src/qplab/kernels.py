"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``QPLAB_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("QPLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

offset_profile = _impl.offset_profile
pair_ratio_extrema = _impl.pair_ratio_extrema
diophantine_scan = _impl.diophantine_scan

__all__ = ["BACKEND", "offset_profile", "pair_ratio_extrema", "diophantine_scan"]

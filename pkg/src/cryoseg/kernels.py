"""Backend selection for the hot loops.

The Cython extension is used when importable; otherwise the interpreted
versions take over. ``CRYOSEG_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("CRYOSEG_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

BACKENDS = {"python": _kernels_py}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl

flood = _impl.flood
contingency = _impl.contingency
label_boundaries = _impl.label_boundaries

"""Backend selection for the temporal unfold/fold kernels.

The compiled extension is used when it imports; setting ``DUALHEAD_PURE=1``
forces the numpy fallback.
"""
import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("DUALHEAD_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def _pick(arr):
    # the compiled core is float64-only
    return _impl if arr.dtype == np.float64 else _kernels_py


def unfold_time(x: np.ndarray, kernel: int, dilation: int = 1) -> np.ndarray:
    """(B, C, T, N) -> (B, C, kernel, T, N) zero-padded "same" windows."""
    x = np.ascontiguousarray(x)
    return _pick(x).unfold_time(x, int(kernel), int(dilation))


def fold_time(cols: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Adjoint of :func:`unfold_time`."""
    cols = np.ascontiguousarray(cols)
    return _pick(cols).fold_time(cols, int(dilation))


def backends():
    """Available implementations, keyed by name."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out

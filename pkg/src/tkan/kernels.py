"""Backend selection for the batched B-spline kernel.

The compiled extension is preferred; set ``TKAN_PURE_PYTHON=1`` to force the
numpy fallback. ``BACKEND`` names whichever one was picked at import.
"""
import os

from . import _bspline_py

try:
    if os.environ.get("TKAN_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _bspline as _compiled
except ImportError:
    _compiled = None

if _compiled is not None:
    basis_with_derivative = _compiled.basis_with_derivative
    BACKEND = "cython"
else:
    basis_with_derivative = _bspline_py.basis_with_derivative
    BACKEND = "numpy"

python_basis_with_derivative = _bspline_py.basis_with_derivative
compiled_basis_with_derivative = None if _compiled is None else _compiled.basis_with_derivative

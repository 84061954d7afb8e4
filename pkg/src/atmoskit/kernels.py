"""Hot-kernel dispatch: compiled extension when available, numpy otherwise.

Set ``ATMOSKIT_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("ATMOSKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core
    except ImportError:  # extension not built
        _core = None
else:
    _core = None

if _core is not None:
    BACKEND = "compiled"
    wrench_rk4 = _core.wrench_rk4
    rate_rk4 = _core.rate_rk4
    dual_ratio = _core.dual_ratio
    rank1_update = _core.rank1_update
else:
    wrench_rk4 = _kernels_py.wrench_rk4
    rate_rk4 = _kernels_py.rate_rk4
    dual_ratio = _kernels_py.dual_ratio
    rank1_update = _kernels_py.rank1_update

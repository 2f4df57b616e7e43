"""Backend selection for the numerical hot loops.

The compiled extension ``tpscore._kernels`` is preferred. If it was not built,
or ``TPSCORE_PURE_PYTHON`` is set to a truthy value, the pure-Python twin in
``tpscore._kernels_py`` is used instead. Both expose the same four functions.
"""

import logging
import os

from tpscore import _kernels_py

logger = logging.getLogger(__name__)

_FORCE_PURE = os.environ.get("TPSCORE_PURE_PYTHON", "").strip().lower() in {"1", "true", "yes"}

if _FORCE_PURE:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from tpscore import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable, using pure-Python fallback")
        _impl = _kernels_py
        BACKEND = "python"

betainc = _impl.betainc
betainc_array = _impl.betainc_array
compensated_sum = _impl.compensated_sum
row_compensated_sums = _impl.row_compensated_sums

BACKENDS = {"python": _kernels_py}
if BACKEND == "compiled":
    BACKENDS["compiled"] = _impl

__all__ = [
    "BACKEND",
    "BACKENDS",
    "betainc",
    "betainc_array",
    "compensated_sum",
    "row_compensated_sums",
]

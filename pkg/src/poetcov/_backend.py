"""Pick the compiled kernels when available, else the numpy fallback.

Set ``POETCOV_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py as python_kernels

compiled_kernels = None
if os.environ.get("POETCOV_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_kernels
    except ImportError:  # extension not built
        compiled_kernels = None

kernels = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "cython" if compiled_kernels is not None else "python"

shrink_array = kernels.shrink_array
threshold_matrix = kernels.threshold_matrix
residual_moments = kernels.residual_moments

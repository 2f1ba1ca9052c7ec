"""Hot numeric kernels with a compiled core and a pure-NumPy fallback.

The Cython extension ``_speedups`` is preferred when importable; setting
the environment variable ``STCUTFEM_PURE_PYTHON`` (to any non-empty value)
forces the NumPy implementations. ``BACKEND`` reports which one is active.
"""

import os

if os.environ.get("STCUTFEM_PURE_PYTHON"):
    from . import _pure as _impl
else:
    try:
        from . import _speedups as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pure as _impl

BACKEND = _impl.BACKEND
local_matrices = _impl.local_matrices
min_dist_to_segments = _impl.min_dist_to_segments

__all__ = ["BACKEND", "local_matrices", "min_dist_to_segments"]

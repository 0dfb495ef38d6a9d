"""Backend dispatch for the hot kernels.

MADBAL_BACKEND selects the implementation: "cython" requires the compiled
extension, "numpy" forces the pure fallback, "auto" (default) prefers the
extension when importable.  The active choice is exposed as BACKEND.
"""

from __future__ import annotations

import os

from madbal import _npkernels

_requested = os.environ.get("MADBAL_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "cython", "numpy"):
    raise RuntimeError(f"MADBAL_BACKEND must be auto, cython or numpy, got {_requested!r}")

BACKEND = "numpy"
_impl = _npkernels
if _requested in ("auto", "cython"):
    try:
        from madbal import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise RuntimeError(
                "MADBAL_BACKEND=cython but the compiled extension is not "
                "available; rebuild the package or use MADBAL_BACKEND=numpy"
            ) from None
        _impl = _npkernels

fused_pixel_uncertainty = _impl.fused_pixel_uncertainty
slic_iterate = _impl.slic_iterate
connected_components = _impl.connected_components


def backend_name() -> str:
    return BACKEND

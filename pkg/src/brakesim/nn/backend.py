"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy reference
implementation is the fallback.  Set ``BRAKESIM_NN_BACKEND=py`` or ``=cy``
before importing the package to force one (forcing ``cy`` raises if the
extension is missing rather than silently falling back).
"""

from __future__ import annotations

import os


def _select():
    forced = os.environ.get("BRAKESIM_NN_BACKEND", "").strip().lower()
    if forced and forced not in ("py", "cy"):
        raise ValueError(f"BRAKESIM_NN_BACKEND must be 'py' or 'cy', got {forced!r}")
    if forced == "py":
        from . import _kernels_py

        return _kernels_py, "py"
    if forced == "cy":
        from . import _kernels_cy

        return _kernels_cy, "cy"
    try:
        from . import _kernels_cy

        return _kernels_cy, "cy"
    except ImportError:
        from . import _kernels_py

        return _kernels_py, "py"


kernels, BACKEND = _select()

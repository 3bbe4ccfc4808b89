"""Kernel backend selection.

The compiled extension is used when it imports; setting ``INFSA_PURE_PYTHON=1``
forces the numpy fallback (useful for debugging and for backend comparisons).
"""

import os

from infsa import _pykernels

if os.environ.get("INFSA_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from infsa import _kernels as kernels
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"
    else:
        BACKEND = "compiled"


def available_backends():
    """Map of backend name to kernel module, for side-by-side comparison."""
    found = {"python": _pykernels}
    try:
        from infsa import _kernels
    except ImportError:
        pass
    else:
        found["compiled"] = _kernels
    return found

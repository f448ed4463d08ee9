"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
implementation is loaded.  Set ``SURGE_AL_BACKEND=python`` to force the
fallback (``cython`` makes a missing extension an error).
"""

import os

from . import _kernels_py

_requested = os.environ.get("SURGE_AL_BACKEND", "auto").lower()

if _requested == "python":
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        if _requested == "cython":
            raise
        kernels = _kernels_py

BACKEND = kernels.BACKEND


def available_backends():
    """Return every importable kernel module keyed by backend name."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found

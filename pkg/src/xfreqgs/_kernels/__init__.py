"""Kernel backend selection.

The compiled extension is preferred when importable; the pure-Python
reference backend is the fallback.  Set XFREQ_FORCE_PY_KERNELS=1 to force
the fallback (used by the cross-backend tests and the benchmark).
Both backends are bit-identical by construction.
"""

import os

from . import pyref

if os.environ.get("XFREQ_FORCE_PY_KERNELS", "") == "1":
    _impl = pyref
else:
    try:
        from . import _accum as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = pyref

BACKEND_NAME = _impl.BACKEND_NAME
find_pairs = _impl.find_pairs
group_by_cell = _impl.group_by_cell
weight_backward = _impl.weight_backward
accumulate_forward = _impl.accumulate_forward
accumulate_backward = _impl.accumulate_backward


def available_backends():
    """Name -> module for every importable backend."""
    out = {"python": pyref}
    try:
        from . import _accum

        out["compiled"] = _accum
    except ImportError:
        pass
    return out

"""Hot kernels for frozen-switch ReLU networks.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Set ``CONVEXITY_LAB_BACKEND=python`` to force the
fallback (``cython`` forces the extension and fails loudly if missing).
"""
import os

from . import _pykernels

_requested = os.environ.get("CONVEXITY_LAB_BACKEND", "").strip().lower()

if _requested == "python":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _pykernels

BACKEND = _impl.BACKEND
forward = _impl.forward
frozen_forward = _impl.frozen_forward
backprop = _impl.backprop
hvp = _impl.hvp
jet2 = _impl.jet2
sq_jacobian_rows = _impl.sq_jacobian_rows


def available_backends():
    """Map backend name to kernel module for every importable backend."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found

"""Kernel backend selection.

The compiled extension is used when importable; otherwise, or when
``SABAN_PURE_PYTHON=1`` is set, the numpy fallback is used.
"""

import os

from . import _kernels_py


def _load_compiled():
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()

if _compiled is not None and os.environ.get("SABAN_PURE_PYTHON", "") not in ("1", "true"):
    _impl = _compiled
else:
    _impl = _kernels_py

BACKEND = _impl.BACKEND
synth_rows = _impl.synth_rows
ban_forward = _impl.ban_forward
ban_backward = _impl.ban_backward


def available_backends():
    names = {"python": _kernels_py}
    if _compiled is not None:
        names["cython"] = _compiled
    return names

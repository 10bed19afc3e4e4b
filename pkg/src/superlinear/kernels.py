"""Backend selection for the hot loops.

The compiled ``_kernels`` extension is preferred; the pure-Python module
is used when it is missing or when ``SUPERLINEAR_PURE_PYTHON=1`` is set.
Both expose ``audit_range``, ``route_geometry`` and ``linear_scan``.
"""

import os

from . import _kernels_py

if os.environ.get("SUPERLINEAR_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND
audit_range = _impl.audit_range
route_geometry = _impl.route_geometry
linear_scan = _impl.linear_scan


def backends():
    """All importable backend modules keyed by name."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out

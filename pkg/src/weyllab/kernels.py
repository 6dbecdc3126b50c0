"""Backend selection for the hot loops.

The Cython extension ``weyllab._kernels`` is used when it imports; otherwise the
numpy/pure-Python module is used.  Set ``WEYLLAB_PURE_PYTHON=1`` to force the
fallback (the test-suite runs both).
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("WEYLLAB_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython', 'python' or None for active)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def bump_fields(x, y, cx, cy, eps, ubm1):
    return _impl.bump_fields(x, y, cx, cy, eps, ubm1)


def geodesic_rk4(x0, y0, th0, length, nsteps, cx, cy, eps, ubm1):
    return _impl.geodesic_rk4(x0, y0, th0, length, nsteps, cx, cy, eps, ubm1)


def riccati_relax(K, h, u0, max_periods, tol):
    return _impl.riccati_relax(K, h, u0, max_periods, tol)

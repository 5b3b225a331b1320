"""Backend selection for the pairwise kernel sums.

The compiled extension is used when it imports; otherwise the NumPy
implementation is used.  ``SQGPATCH_BACKEND=python`` forces the fallback and
``SQGPATCH_NUM_THREADS`` sets the thread count of the compiled loops.
"""
import os

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"

if os.environ.get("SQGPATCH_BACKEND", "").lower() != "python":
    try:
        from . import _kernels_c as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "compiled"
        _compiled.set_num_threads(int(os.environ.get("SQGPATCH_NUM_THREADS", "1")))


def use_backend(name: str) -> None:
    """Switch between ``"compiled"`` and ``"python"`` at runtime."""
    global _impl, BACKEND
    if name == "python":
        _impl, BACKEND = _kernels_py, "python"
    elif name == "compiled":
        from . import _kernels_c
        _impl, BACKEND = _kernels_c, "compiled"
    else:
        raise ValueError(f"unknown backend {name!r}")


def pair_sum(tz, tdz, sz, sdz, alpha, beta, weight, skip_stride):
    return _impl.pair_sum(tz, tdz, sz, sdz, float(alpha), float(beta), float(weight), int(skip_stride))


def boundary_sum(x, sz, sdz, alpha, beta, weight):
    return _impl.boundary_sum(x, sz, sdz, float(alpha), float(beta), float(weight))


def boundary_grad_sum(x, sz, sdz, alpha, beta, weight):
    return _impl.boundary_grad_sum(x, sz, sdz, float(alpha), float(beta), float(weight))


def chord_arc_sup(z):
    return _impl.chord_arc_sup(z)

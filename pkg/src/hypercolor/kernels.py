"""Backend selection for the hot loops.

The compiled extension ``hypercolor._kernels`` is used when it imports;
otherwise, or when the environment variable ``HYPERCOLOR_PURE_PYTHON`` is set
to a non-empty value, the numpy implementations in ``hypercolor._fallback``
are used. ``BACKEND`` names the active one.
"""
import os

import numpy as np

from . import _fallback

compiled = None
if not os.environ.get("HYPERCOLOR_PURE_PYTHON"):
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

_impl = compiled if compiled is not None else _fallback
BACKEND = "compiled" if compiled is not None else "python"


def get_backend(name=None):
    """Return the kernel module for ``name`` ("compiled", "python" or None for active)."""
    if name is None:
        return _impl
    if name == "python":
        return _fallback
    if name == "compiled":
        if compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return compiled
    raise ValueError(f"unknown backend {name!r}")


def _c(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def dense_forward(x, w, b, impl=None):
    dtype = np.result_type(x.dtype, w.dtype)
    return (impl or _impl).dense_forward(_c(x, dtype), _c(w, dtype), _c(b, dtype))


def dense_backward(x, w, up, impl=None):
    dtype = np.result_type(x.dtype, w.dtype)
    return (impl or _impl).dense_backward(_c(x, dtype), _c(w, dtype), _c(up, dtype))


def nearest_brute(query, ref, impl=None):
    return (impl or _impl).nearest_brute(_c(query), _c(ref))


def kdtree_query(tree, queries, k, impl=None):
    return (impl or _impl).kdtree_query(
        tree.data, tree.order, tree.split_dim, tree.split_val,
        tree.left, tree.right, tree.start, tree.stop, _c(queries), int(k),
    )


def linear_assignment(cost, impl=None):
    return (impl or _impl).linear_assignment(_c(cost))

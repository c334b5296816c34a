"""Backend selection for the convolution/pooling kernels.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy implementation in ``_pykernels`` takes over. Setting the environment
variable ``TILECLUSTER_PURE_PYTHON=1`` forces the numpy path.
"""

import os
from contextlib import contextmanager

import numpy as np

from tilecluster import _pykernels

try:
    if os.environ.get("TILECLUSTER_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python kernels requested")
    from tilecluster import _ckernels
except ImportError:
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

BACKEND = "cython" if _ckernels is not None else "python"
_impl = BACKENDS[BACKEND]


def get_backend(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    if name is None:
        return _impl
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None


def set_backend(name):
    """Switch the active backend for the whole process."""
    global _impl, BACKEND
    _impl = get_backend(name)
    BACKEND = name


@contextmanager
def use_backend(name):
    previous = BACKEND
    set_backend(name)
    try:
        yield _impl
    finally:
        set_backend(previous)


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, b):
    return _impl.conv2d_forward(_c(x), _c(w), _c(b))


def conv2d_backward(x, w, grad_out):
    return _impl.conv2d_backward(_c(x), _c(w), _c(grad_out))


def maxpool2d_forward(x):
    return _impl.maxpool2d_forward(_c(x))


def maxpool2d_backward(grad_out, idx, input_shape):
    return _impl.maxpool2d_backward(_c(grad_out), np.ascontiguousarray(idx, dtype=np.int8),
                                    tuple(input_shape))

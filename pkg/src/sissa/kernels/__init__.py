"""Hot inner loops behind a switchable backend.

The numba backend is used when numba imports and ``SISSA_NUMBA`` is not
``0``; otherwise the vectorised numpy versions run.  Both expose the same
functions and agree to floating-point rounding.  Callers must look kernels
up through this module (``kernels.conv2d_forward``) so :func:`use_backend`
takes effect everywhere.
"""

import os

from . import numpy_impl

KERNELS = (
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2d_forward",
    "maxpool2d_backward",
    "lstm_pointwise_forward",
    "lstm_pointwise_backward",
)


def numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _impl(name):
    if name == "numba":
        from . import numba_impl
        return numba_impl
    if name == "numpy":
        return numpy_impl
    raise ValueError(f"unknown kernel backend {name!r}")


def use_backend(name: str) -> None:
    global backend
    impl = _impl(name)
    g = globals()
    for k in KERNELS:
        g[k] = getattr(impl, k)
    backend = name


def _default() -> str:
    if os.environ.get("SISSA_NUMBA", "1").strip().lower() in ("0", "false", "off", "no"):
        return "numpy"
    return "numba" if numba_available() else "numpy"


backend = "numpy"
use_backend(_default())

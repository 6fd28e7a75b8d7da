"""Backend selection for the convolution kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is used. Setting ``REFLITER_PURE_PYTHON=1`` forces the fallback.
Both backends produce bit-identical results.

``flush_denormals()`` switches subnormal floats to zero on the calling
thread while active. Saturated gates produce subnormals late in training and
they slow BLAS down several fold. The switch needs the compiled extension on
x86; elsewhere it is a no-op.
"""
import contextlib
import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("REFLITER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

im2col = _impl.im2col
col2im = _impl.col2im


def flush_supported():
    return _impl is not _kernels_py and _impl.flush_supported()


@contextlib.contextmanager
def flush_denormals(enabled=True):
    if not (enabled and flush_supported()):
        yield False
        return
    before = _impl.set_flush_denormal(True)
    try:
        yield True
    finally:
        _impl.set_flush_denormal(before)


def available_backends():
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out

"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used when it is
missing or when ``DACTEXT_PURE_PYTHON`` is set to a non-empty value other
than ``0``.

With the compiled backend the convolution forward still goes through the
numpy (BLAS matmul) path once a filter bank holds ``BLAS_FORWARD_MIN``
weights or more, where BLAS beats the direct loops. The choice depends only
on shapes, so runs stay deterministic.
"""
import os

from . import _kernels_py

_force_py = os.environ.get("DACTEXT_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

BLAS_FORWARD_MIN = 8192


def _conv_relu_maxpool_dispatch(x, lengths, kernel, bias):
    if kernel.size >= BLAS_FORWARD_MIN:
        return _kernels_py.conv_relu_maxpool(x, lengths, kernel, bias)
    return _impl.conv_relu_maxpool(x, lengths, kernel, bias)


conv_relu_maxpool = _impl.conv_relu_maxpool if _impl is _kernels_py else _conv_relu_maxpool_dispatch
conv_maxpool_backward = _impl.conv_maxpool_backward
scatter_add_rows = _impl.scatter_add_rows
fisher_2x3_sums = _impl.fisher_2x3_sums

__all__ = [
    "BACKEND",
    "conv_relu_maxpool",
    "conv_maxpool_backward",
    "scatter_add_rows",
    "fisher_2x3_sums",
]

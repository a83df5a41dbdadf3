"""Kernel backend selection.

The compiled Cython core is preferred when importable; the pure-numpy
implementation is the fallback. Set ``DGDN_PURE_PYTHON=1`` to force the
fallback (used by the benchmark and the cross-backend equivalence tests).
"""

import os

from . import _impl_numpy

if os.environ.get("DGDN_PURE_PYTHON", "") == "1":
    _impl = _impl_numpy
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _impl_numpy

BACKEND = _impl.BACKEND

conv_full = _impl.conv_full
correlate_valid = _impl.correlate_valid
unpool_apply = _impl.unpool_apply
pool_adjoint = _impl.pool_adjoint
scan_blocks_z = _impl.scan_blocks_z
scan_top_l1 = _impl.scan_top_l1
scan_top_l2 = _impl.scan_top_l2
scan_active_w = _impl.scan_active_w

numpy_impl = _impl_numpy


def get_backend(name=None):
    """Return the module implementing the kernels ('cython' or 'numpy')."""
    if name in (None, BACKEND):
        return _impl
    if name == "numpy":
        return _impl_numpy
    if name == "cython":
        try:
            from . import _core
            return _core
        except ImportError as exc:
            raise ImportError("compiled kernel backend is not built") from exc
    raise ValueError(f"unknown backend {name!r}")

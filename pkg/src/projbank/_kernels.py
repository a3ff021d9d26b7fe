"""Backend selection for the inner loops.

The compiled module is used when it imports; set ``PROJBANK_PURE=1`` to
force the numpy fallback.  Both backends take contiguous float64 / int64 /
int8 / uint64 arrays; the wrappers below do the conversion.
"""
import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "numpy"
if not os.environ.get("PROJBANK_PURE"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def backends():
    """Map of available backend name -> module."""
    out = {"numpy": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def hamming_distances(queries, gallery, impl=None):
    impl = impl or _impl
    return impl.hamming_distances(
        np.ascontiguousarray(queries, dtype=np.uint64), np.ascontiguousarray(gallery, dtype=np.uint64)
    )


def linear_hinge(x, w, ii, jj, lab, need_grad=True, impl=None):
    """Sum of active hinge terms, their gradient sum, and the exact-zero margin count."""
    impl = impl or _impl
    return impl.linear_hinge(
        _f64(x), _f64(w), _i64(ii), _i64(jj), np.ascontiguousarray(lab, dtype=np.int8), need_grad
    )


def kernel_hinge(g, ii, jj, lab, impl=None):
    """Hinge sum over pairs of predictions ``g`` and per-sample gradient coefficients."""
    impl = impl or _impl
    return impl.kernel_hinge(_f64(g), _i64(ii), _i64(jj), np.ascontiguousarray(lab, dtype=np.int8))


def segment_dot(x, dims, offsets, weights, impl=None):
    impl = impl or _impl
    return impl.segment_dot(_f64(x), _i64(dims), _i64(offsets), _f64(weights))

"""Kernel dispatch: the compiled extension when importable, else the numpy fallback.

Set ``REBUS_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("REBUS_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _i32(a):
    return np.ascontiguousarray(a, dtype=np.int32)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def bpr_grad(P, beta, long_ptr, long_idx, short_ptr, short_idx, short_w, rows, pos, neg,
             alpha, a, b, scale, gP, gbeta, impl=None):
    impl = impl or _impl
    return impl.bpr_grad(P, beta, _i64(long_ptr), _i32(long_idx), _i64(short_ptr), _i32(short_idx),
                         _f64(short_w), _i64(rows), _i64(pos), _i64(neg),
                         float(alpha), float(a), float(b), float(scale), gP, gbeta)


def context_vectors(P, long_ptr, long_idx, short_ptr, short_idx, short_w, rows, alpha, a, b, impl=None):
    impl = impl or _impl
    return impl.context_vectors(_f64(P), _i64(long_ptr), _i32(long_idx), _i64(short_ptr),
                                _i32(short_idx), _f64(short_w), _i64(rows), float(alpha), float(a), float(b))


def adam_step(theta, grad, m, v, lr, beta1, beta2, eps, t, l2, impl=None):
    impl = impl or _impl
    impl.adam_step(theta, grad, m, v, float(lr), float(beta1), float(beta2), float(eps), int(t), float(l2))

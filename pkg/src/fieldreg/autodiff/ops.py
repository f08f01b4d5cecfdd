"""Generic math that works on ndarrays, Vars, and dual numbers alike.

Field and renderer code is written against these functions so the same
pipeline can be evaluated plainly, with tangents attached, or on a tape.
"""

from __future__ import annotations

import numpy as np

from .dual import Dual2Scalar, DualScalar
from .tape import Var

_DUALS = (DualScalar, Dual2Scalar)


def exp(x):
    return x.exp() if hasattr(x, "exp") else np.exp(x)


def log(x):
    return x.log() if hasattr(x, "log") else np.log(x)


def sin(x):
    return x.sin() if hasattr(x, "sin") else np.sin(x)


def cos(x):
    return x.cos() if hasattr(x, "cos") else np.cos(x)


def sqrt(x):
    return x.sqrt() if hasattr(x, "sqrt") else np.sqrt(x)


def softplus(x):
    if hasattr(x, "softplus"):
        return x.softplus()
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    if hasattr(x, "sigmoid"):
        return x.sigmoid()
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def absolute(x):
    return x.abs() if hasattr(x, "abs") else np.abs(x)


def maximum(a, b):
    if isinstance(a, _DUALS):
        return a.maximum(b)
    if isinstance(b, _DUALS):
        return type(b).lift(a).maximum(b)
    if isinstance(a, Var):
        return a.maximum(b)
    if isinstance(b, Var):
        # first-argument tie rule must follow a, so lift a onto b's tape
        return b.tape.var(a).maximum(b)
    return np.where(np.asarray(a) >= np.asarray(b), a, b)


def minimum(a, b):
    if isinstance(a, _DUALS):
        return a.minimum(b)
    if isinstance(b, _DUALS):
        return type(b).lift(a).minimum(b)
    if isinstance(a, Var):
        return a.minimum(b)
    if isinstance(b, Var):
        return b.tape.var(a).minimum(b)
    return np.where(np.asarray(a) <= np.asarray(b), a, b)


def clip(x, lo, hi):
    return x.clip(lo, hi) if hasattr(x, "clip") else np.clip(x, lo, hi)


def where(mask, a, b):
    if isinstance(a, DualScalar) or isinstance(b, DualScalar):
        return DualScalar.where(mask, a, b)
    if isinstance(a, Dual2Scalar) or isinstance(b, Dual2Scalar):
        return Dual2Scalar.where(mask, a, b)
    if isinstance(a, Var) or isinstance(b, Var):
        return Var.where(mask, a, b)
    return np.where(mask, a, b)


def concat(parts, axis=-1):
    if any(isinstance(p, DualScalar) for p in parts):
        return DualScalar.concat(parts, axis=axis)
    if any(isinstance(p, Dual2Scalar) for p in parts):
        return Dual2Scalar.concat(parts, axis=axis)
    if any(isinstance(p, Var) for p in parts):
        return Var.concat(parts, axis=axis)
    return np.concatenate(parts, axis=axis)


def sum_last(x, keepdims=False):
    return x.sum(axis=-1, keepdims=keepdims)


def asfloat(x):
    """Coerce plain python/list input to float64 ndarray, pass wrappers through."""
    if isinstance(x, (Var, *_DUALS)):
        return x
    return np.asarray(x, dtype=np.float64)

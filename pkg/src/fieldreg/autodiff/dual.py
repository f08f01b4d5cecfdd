"""Forward-mode directional derivatives via dual numbers.

``DualScalar`` carries (value, tangent) and ``Dual2Scalar`` carries
(value, first, second) for one direction, where ``second`` is the full
second directional derivative (not the Taylor coefficient).

Components are duck-typed: plain floats/ndarrays give ordinary forward
mode, ``Var`` components make every derivative coefficient itself a
tape-recorded quantity (so spatial derivatives stay differentiable with
respect to parameters), and DualScalar components give nested forward
mode. Multiple directions are batched by giving tangents extra *leading*
axes; for that to stay consistent, generic code must address axes from
the right (negative axis indices, ``x[..., k]`` style indexing).

Lifting rules: in mixed arithmetic, anything that is not a dual of the
same class is treated as a constant along the direction (tangent 0).
The canonical zero tangent is the float ``0.0``.
"""

from __future__ import annotations

import numpy as np

from . import tape as _tape
from .tape import Var, UsageError

__all__ = ["DualScalar", "Dual2Scalar", "primal", "tangent_of"]


# -- duck-typed component math -------------------------------------------

def _fexp(x):
    return x.exp() if hasattr(x, "exp") else np.exp(x)


def _flog(x):
    return x.log() if hasattr(x, "log") else np.log(x)


def _fsin(x):
    return x.sin() if hasattr(x, "sin") else np.sin(x)


def _fcos(x):
    return x.cos() if hasattr(x, "cos") else np.cos(x)


def _fsqrt(x):
    return x.sqrt() if hasattr(x, "sqrt") else np.sqrt(x)


def _fsoftplus(x):
    if hasattr(x, "softplus"):
        return x.softplus()
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _fsigmoid(x):
    if hasattr(x, "sigmoid"):
        return x.sigmoid()
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _fwhere(mask, a, b):
    if isinstance(a, (DualScalar, Dual2Scalar)) or isinstance(b, (DualScalar, Dual2Scalar)):
        raise UsageError("component where() received a dual; lift at the dual level instead")
    if isinstance(a, Var) or isinstance(b, Var):
        return Var.where(mask, a, b)
    return np.where(mask, a, b)


def _iszero(t):
    return isinstance(t, float) and t == 0.0


def _tadd(a, b):
    if _iszero(a):
        return b
    if _iszero(b):
        return a
    return a + b


def _tsub(a, b):
    if _iszero(b):
        return a
    if _iszero(a):
        return -b
    return a - b


def _tmul(t, x):
    return 0.0 if (_iszero(t) or _iszero(x)) else t * x


def _tneg(t):
    return 0.0 if _iszero(t) else -t


def _tmatmul(t, x):
    return 0.0 if (_iszero(t) or _iszero(x)) else t @ x


def _trmatmul(x, t):
    return 0.0 if (_iszero(t) or _iszero(x)) else x @ t


def _twhere(mask, a, b):
    if _iszero(a) and _iszero(b):
        return 0.0
    if _iszero(a):
        a = np.zeros(())
    if _iszero(b):
        b = np.zeros(())
    return _fwhere(mask, a, b)


def _tsum(t, axis, keepdims):
    return 0.0 if _iszero(t) else t.sum(axis=axis, keepdims=keepdims)


def _tcumsum(t, axis):
    return 0.0 if _iszero(t) else (t.cumsum(axis=axis) if hasattr(t, "cumsum") else np.cumsum(t, axis=axis))


def primal(x):
    """Strip duals and tape wrappers down to the raw ndarray/float."""
    while True:
        if isinstance(x, (DualScalar, Dual2Scalar)):
            x = x.value
        elif isinstance(x, Var):
            x = x.value
        else:
            return x


def tangent_of(x, like=None):
    """Tangent of a dual, materializing the canonical zero if needed."""
    t = x.tangent if isinstance(x, DualScalar) else 0.0
    if _iszero(t) and like is not None:
        return np.zeros_like(np.asarray(like, dtype=np.float64))
    return t


def _shape_of(x):
    v = primal(x)
    return np.shape(v)


def _materialize(t, shape):
    return np.zeros(shape) if _iszero(t) else t


class DualScalar:
    """First-order dual number: value + ε·tangent with ε² = 0."""

    __slots__ = ("value", "tangent")
    __array_ufunc__ = None

    def __init__(self, value, tangent=0.0):
        self.value = value
        self.tangent = tangent

    def __repr__(self):
        return f"DualScalar({self.value!r}, {self.tangent!r})"

    @classmethod
    def lift(cls, x):
        return x if isinstance(x, cls) else cls(x, 0.0)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        o = DualScalar.lift(other)
        return DualScalar(self.value + o.value, _tadd(self.tangent, o.tangent))

    __radd__ = __add__

    def __sub__(self, other):
        o = DualScalar.lift(other)
        return DualScalar(self.value - o.value, _tsub(self.tangent, o.tangent))

    def __rsub__(self, other):
        o = DualScalar.lift(other)
        return DualScalar(o.value - self.value, _tsub(o.tangent, self.tangent))

    def __mul__(self, other):
        o = DualScalar.lift(other)
        return DualScalar(self.value * o.value,
                          _tadd(_tmul(self.tangent, o.value), _tmul(o.tangent, self.value)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = DualScalar.lift(other)
        inv = 1.0 / o.value
        val = self.value * inv
        return DualScalar(val, _tmul(_tsub(self.tangent, _tmul(o.tangent, val)), inv))

    def __rtruediv__(self, other):
        return DualScalar.lift(other) / self

    def __neg__(self):
        return DualScalar(-self.value, _tneg(self.tangent))

    def __pow__(self, e):
        e = float(e)
        return DualScalar(self.value ** e, _tmul(self.tangent, e * self.value ** (e - 1.0)))

    def __matmul__(self, other):
        o = DualScalar.lift(other)
        return DualScalar(self.value @ o.value,
                          _tadd(_tmatmul(self.tangent, o.value), _trmatmul(self.value, o.tangent)))

    def __rmatmul__(self, other):
        return DualScalar.lift(other) @ self

    # -- elementwise functions ------------------------------------------------

    def exp(self):
        v = _fexp(self.value)
        return DualScalar(v, _tmul(self.tangent, v))

    def log(self):
        return DualScalar(_flog(self.value), _tmul(self.tangent, 1.0 / self.value))

    def sin(self):
        return DualScalar(_fsin(self.value), _tmul(self.tangent, _fcos(self.value)))

    def cos(self):
        return DualScalar(_fcos(self.value), _tneg(_tmul(self.tangent, _fsin(self.value))))

    def sqrt(self):
        v = _fsqrt(self.value)
        return DualScalar(v, _tmul(self.tangent, 0.5 / v))

    def softplus(self):
        return DualScalar(_fsoftplus(self.value), _tmul(self.tangent, _fsigmoid(self.value)))

    def sigmoid(self):
        s = _fsigmoid(self.value)
        return DualScalar(s, _tmul(self.tangent, s * (1.0 - s)))

    def abs(self):
        sign = np.where(primal(self.value) >= 0.0, 1.0, -1.0)
        return DualScalar(self.value * sign, _tmul(self.tangent, sign))

    __abs__ = abs

    def maximum(self, other):
        o = DualScalar.lift(other)
        mask = primal(self.value) >= primal(o.value)
        return DualScalar(_fwhere(mask, self.value, o.value),
                          _twhere(mask, self.tangent, o.tangent))

    def minimum(self, other):
        o = DualScalar.lift(other)
        mask = primal(self.value) <= primal(o.value)
        return DualScalar(_fwhere(mask, self.value, o.value),
                          _twhere(mask, self.tangent, o.tangent))

    def clip(self, lo, hi):
        v = primal(self.value)
        mask = (v >= lo) & (v <= hi)
        cv = self.value.clip(lo, hi) if hasattr(self.value, "clip") else np.clip(self.value, lo, hi)
        return DualScalar(cv, _twhere(mask, self.tangent, 0.0))

    @staticmethod
    def where(mask, a, b):
        a = DualScalar.lift(a)
        b = DualScalar.lift(b)
        return DualScalar(_fwhere(mask, a.value, b.value), _twhere(mask, a.tangent, b.tangent))

    # -- structural (linear, applied componentwise) ---------------------------

    def sum(self, axis=-1, keepdims=False):
        if axis is None or (isinstance(axis, int) and axis >= 0):
            raise UsageError("dual reductions must use negative axes (direction axes lead)")
        return DualScalar(self.value.sum(axis=axis, keepdims=keepdims),
                          _tsum(self.tangent, axis, keepdims))

    def mean(self, axis=-1, keepdims=False):
        n = _shape_of(self)[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def cumsum(self, axis=-1):
        if axis >= 0:
            raise UsageError("dual cumsum must use a negative axis")
        return DualScalar(self.value.cumsum(axis=axis) if hasattr(self.value, "cumsum")
                          else np.cumsum(self.value, axis=axis),
                          _tcumsum(self.tangent, axis))

    def __getitem__(self, key):
        # Right-aligned: the key must address trailing axes only (start it
        # with Ellipsis), because tangents may carry extra leading axes.
        key = key if isinstance(key, tuple) else (key,)
        if key[0] is not Ellipsis:
            raise UsageError("dual indexing keys must start with Ellipsis")
        t = self.tangent
        return DualScalar(self.value[key], t if _iszero(t) else t[key])

    @staticmethod
    def concat(parts, axis=-1):
        if axis >= 0:
            raise UsageError("dual concat must use a negative axis")
        parts = [DualScalar.lift(p) for p in parts]
        if all(_iszero(p.tangent) for p in parts):
            tan = 0.0
        else:
            tans = [np.zeros(_shape_of(p)) if _iszero(p.tangent) else p.tangent for p in parts]
            tan = _concat_components(tans, axis)
        return DualScalar(_concat_components([p.value for p in parts], axis), tan)


def _concat_components(comps, axis):
    """Concatenate mixed components, right-align-broadcasting the leading
    (direction) axes to a common shape first."""
    if any(isinstance(c, (DualScalar, Dual2Scalar)) for c in comps):
        cls = DualScalar if any(isinstance(c, DualScalar) for c in comps) else Dual2Scalar
        return cls.concat(comps, axis=axis)
    others = []
    for c in comps:
        s = list(np.shape(c))
        s.pop(axis)
        others.append(tuple(s))
    target = np.broadcast_shapes(*others)
    pos = len(target) + 1 + axis
    expanded = []
    for c in comps:
        s = list(target)
        s.insert(pos, np.shape(c)[axis])
        if isinstance(c, Var):
            expanded.append(c if c.shape == tuple(s) else c.broadcast_to(tuple(s)))
        else:
            expanded.append(np.broadcast_to(c, tuple(s)))
    if any(isinstance(c, Var) for c in expanded):
        return Var.concat(expanded, axis=axis)
    return np.concatenate(expanded, axis=axis)


class Dual2Scalar:
    """Second-order jet along one direction: (value, first, second).

    Composing two DualScalar layers along the same direction produces the
    same ``second`` coefficient; this class just does it in one pass.
    """

    __slots__ = ("value", "first", "second")
    __array_ufunc__ = None

    def __init__(self, value, first=0.0, second=0.0):
        self.value = value
        self.first = first
        self.second = second

    def __repr__(self):
        return f"Dual2Scalar({self.value!r}, {self.first!r}, {self.second!r})"

    @classmethod
    def lift(cls, x):
        return x if isinstance(x, cls) else cls(x, 0.0, 0.0)

    def _chain(self, f0, d1, d2):
        """Apply a scalar function given value f0 and derivatives d1, d2 at self.value."""
        u1, u2 = self.first, self.second
        first = _tmul(u1, d1)
        second = _tadd(_tmul(_tmul(u1, u1), d2), _tmul(u2, d1))
        return Dual2Scalar(f0, first, second)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        o = Dual2Scalar.lift(other)
        return Dual2Scalar(self.value + o.value, _tadd(self.first, o.first),
                           _tadd(self.second, o.second))

    __radd__ = __add__

    def __sub__(self, other):
        o = Dual2Scalar.lift(other)
        return Dual2Scalar(self.value - o.value, _tsub(self.first, o.first),
                           _tsub(self.second, o.second))

    def __rsub__(self, other):
        o = Dual2Scalar.lift(other)
        return o - self

    def __mul__(self, other):
        o = Dual2Scalar.lift(other)
        first = _tadd(_tmul(self.first, o.value), _tmul(o.first, self.value))
        second = _tadd(_tadd(_tmul(self.second, o.value), _tmul(o.second, self.value)),
                       _tmul(_tmul(self.first, o.first), 2.0))
        return Dual2Scalar(self.value * o.value, first, second)

    __rmul__ = __mul__

    def _reciprocal(self):
        v = self.value
        inv = 1.0 / v
        inv2 = inv * inv
        first = _tneg(_tmul(self.first, inv2))
        second = _tsub(_tmul(_tmul(self.first, self.first), 2.0 * inv2 * inv),
                       _tmul(self.second, inv2))
        return Dual2Scalar(inv, first, second)

    def __truediv__(self, other):
        return self * Dual2Scalar.lift(other)._reciprocal()

    def __rtruediv__(self, other):
        return Dual2Scalar.lift(other) * self._reciprocal()

    def __neg__(self):
        return Dual2Scalar(-self.value, _tneg(self.first), _tneg(self.second))

    def __pow__(self, e):
        e = float(e)
        v = self.value
        return self._chain(v ** e, e * v ** (e - 1.0), e * (e - 1.0) * v ** (e - 2.0))

    def __matmul__(self, other):
        o = Dual2Scalar.lift(other)
        first = _tadd(_tmatmul(self.first, o.value), _trmatmul(self.value, o.first))
        second = _tadd(_tadd(_tmatmul(self.second, o.value), _trmatmul(self.value, o.second)),
                       _tmul(_tmatmul(self.first, o.first), 2.0))
        return Dual2Scalar(self.value @ o.value, first, second)

    def __rmatmul__(self, other):
        return Dual2Scalar.lift(other) @ self

    # -- elementwise functions ------------------------------------------------

    def exp(self):
        v = _fexp(self.value)
        return self._chain(v, v, v)

    def log(self):
        v = self.value
        return self._chain(_flog(v), 1.0 / v, -1.0 / (v * v))

    def sin(self):
        s, c = _fsin(self.value), _fcos(self.value)
        return self._chain(s, c, -s)

    def cos(self):
        s, c = _fsin(self.value), _fcos(self.value)
        return self._chain(c, -s, -c)

    def sqrt(self):
        r = _fsqrt(self.value)
        return self._chain(r, 0.5 / r, -0.25 / (r * self.value))

    def softplus(self):
        s = _fsigmoid(self.value)
        return self._chain(_fsoftplus(self.value), s, s * (1.0 - s))

    def sigmoid(self):
        s = _fsigmoid(self.value)
        return self._chain(s, s * (1.0 - s), s * (1.0 - s) * (1.0 - 2.0 * s))

    def abs(self):
        sign = np.where(primal(self.value) >= 0.0, 1.0, -1.0)
        return Dual2Scalar(self.value * sign, _tmul(self.first, sign), _tmul(self.second, sign))

    __abs__ = abs

    def maximum(self, other):
        o = Dual2Scalar.lift(other)
        mask = primal(self.value) >= primal(o.value)
        return Dual2Scalar(_fwhere(mask, self.value, o.value),
                           _twhere(mask, self.first, o.first),
                           _twhere(mask, self.second, o.second))

    def minimum(self, other):
        o = Dual2Scalar.lift(other)
        mask = primal(self.value) <= primal(o.value)
        return Dual2Scalar(_fwhere(mask, self.value, o.value),
                           _twhere(mask, self.first, o.first),
                           _twhere(mask, self.second, o.second))

    def clip(self, lo, hi):
        v = primal(self.value)
        mask = (v >= lo) & (v <= hi)
        cv = self.value.clip(lo, hi) if hasattr(self.value, "clip") else np.clip(self.value, lo, hi)
        return Dual2Scalar(cv, _twhere(mask, self.first, 0.0), _twhere(mask, self.second, 0.0))

    @staticmethod
    def where(mask, a, b):
        a = Dual2Scalar.lift(a)
        b = Dual2Scalar.lift(b)
        return Dual2Scalar(_fwhere(mask, a.value, b.value),
                           _twhere(mask, a.first, b.first),
                           _twhere(mask, a.second, b.second))

    # -- structural -----------------------------------------------------------

    def sum(self, axis=-1, keepdims=False):
        if axis is None or (isinstance(axis, int) and axis >= 0):
            raise UsageError("dual reductions must use negative axes (direction axes lead)")
        return Dual2Scalar(self.value.sum(axis=axis, keepdims=keepdims),
                           _tsum(self.first, axis, keepdims),
                           _tsum(self.second, axis, keepdims))

    def cumsum(self, axis=-1):
        if axis >= 0:
            raise UsageError("dual cumsum must use a negative axis")
        return Dual2Scalar(np.cumsum(self.value, axis=axis) if not hasattr(self.value, "cumsum")
                           else self.value.cumsum(axis=axis),
                           _tcumsum(self.first, axis), _tcumsum(self.second, axis))

    def __getitem__(self, key):
        key = key if isinstance(key, tuple) else (key,)
        if key[0] is not Ellipsis:
            raise UsageError("dual indexing keys must start with Ellipsis")

        def pick(t):
            return t if _iszero(t) else t[key]
        return Dual2Scalar(self.value[key], pick(self.first), pick(self.second))

    @staticmethod
    def concat(parts, axis=-1):
        if axis >= 0:
            raise UsageError("dual concat must use a negative axis")
        parts = [Dual2Scalar.lift(p) for p in parts]

        def comp(get):
            vals = [get(p) for p in parts]
            if all(_iszero(v) for v in vals):
                return 0.0
            vals = [np.zeros(_shape_of(p)) if _iszero(v) else v for p, v in zip(parts, vals)]
            return _concat_components(vals, axis)

        return Dual2Scalar(_concat_components([p.value for p in parts], axis),
                           comp(lambda p: p.first), comp(lambda p: p.second))


_tape._DUAL_TYPES = (DualScalar, Dual2Scalar)

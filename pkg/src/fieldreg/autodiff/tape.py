"""Reverse-mode autodiff over numpy arrays.

``Var`` wraps an ndarray and records every primitive applied to it on a
``Tape``. The tape is an append-only list, so creation order is already a
topological order and the backward pass is a single reversed sweep that
touches each node exactly once. All arithmetic is float64.

Vars are meant to be short-lived: a tape is built per optimization step and
dropped afterwards, which keeps memory bounded by one batch.
"""

from __future__ import annotations

import numpy as np

# When enabled (default), every primitive checks its result for NaN/Inf and
# raises NonFiniteError naming the op. Costs a cheap isfinite pass per node.
CHECK_FINITE = True


class NonFiniteError(ArithmeticError):
    """A primitive produced a non-finite value."""

    def __init__(self, op, detail=""):
        self.op = op
        super().__init__(f"non-finite value produced by '{op}'" + (f" ({detail})" if detail else ""))


class UsageError(ValueError):
    """Caller violated an input contract."""


def _asarray(x):
    return np.asarray(x, dtype=np.float64)


def _check(op, value):
    if CHECK_FINITE and not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    return value


# Populated by dual.py at import time; Var arithmetic defers to dual
# operands so "Var op dual" promotes into the dual algebra.
_DUAL_TYPES = ()


def _defer(other):
    return isinstance(other, _DUAL_TYPES)


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` by summing broadcast axes."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tape:
    """Append-only record of primitive ops plus the trainable leaves."""

    def __init__(self):
        self.nodes = []
        self.params = {}

    def var(self, value, op="input"):
        return Var(_check(op, _asarray(value)), self, op=op)

    def param(self, name, value):
        """Register a trainable leaf. Gradients are collected per name."""
        if name in self.params:
            raise UsageError(f"duplicate parameter '{name}'")
        v = self.var(value, op=f"param:{name}")
        v.param_name = name
        self.params[name] = v
        return v

    def params_from(self, values):
        """Lift a {name: ndarray} mapping into parameter Vars."""
        return {name: self.param(name, arr) for name, arr in values.items()}

    def backward(self, output, seed=None):
        """Accumulate d(output)/d(leaf) for every recorded node.

        Returns {param_name: gradient ndarray}. ``output`` must be a scalar
        Var recorded on this tape unless ``seed`` supplies the adjoint.
        """
        if not isinstance(output, Var) or output.tape is not self:
            raise UsageError("output was not recorded on this tape")
        if seed is None:
            if output.value.size != 1:
                raise UsageError("backward needs a scalar output or an explicit seed")
            seed = np.ones_like(output.value)
        for node in self.nodes:
            node.adj = None
        output.adj = _asarray(seed)
        # Reversed creation order is a reverse topological order; each node's
        # adjoint is complete by the time it is visited.
        for node in reversed(self.nodes):
            if node.adj is None or node._bw is None:
                continue
            node._bw(node.adj)
        grads = {}
        for name, p in self.params.items():
            grads[name] = p.adj if p.adj is not None else np.zeros_like(p.value)
        return grads


class Var:
    """A tape-recorded array value."""

    __slots__ = ("value", "tape", "adj", "_bw", "param_name")
    __array_ufunc__ = None  # make numpy defer binary ops to our reflected methods

    def __init__(self, value, tape, op="input", bw=None):
        self.value = value
        self.tape = tape
        self.adj = None
        self._bw = bw
        self.param_name = None
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.value.shape}, op_count={len(self.tape.nodes)})"

    def _accum(self, g):
        g = _unbroadcast(g, self.value.shape)
        self.adj = g if self.adj is None else self.adj + g

    def _new(self, op, value, bw):
        return Var(_check(op, value), self.tape, op=op, bw=bw)

    # -- binary arithmetic --------------------------------------------------

    def __add__(self, other):
        if _defer(other):
            return NotImplemented
        if isinstance(other, Var):
            def bw(g, a=self, b=other):
                a._accum(g)
                b._accum(g)
            return self._new("add", self.value + other.value, bw)
        c = _asarray(other)

        def bw(g, a=self):
            a._accum(g)
        return self._new("add", self.value + c, bw)

    __radd__ = __add__

    def __sub__(self, other):
        if _defer(other):
            return NotImplemented
        if isinstance(other, Var):
            def bw(g, a=self, b=other):
                a._accum(g)
                b._accum(-g)
            return self._new("sub", self.value - other.value, bw)
        c = _asarray(other)

        def bw(g, a=self):
            a._accum(g)
        return self._new("sub", self.value - c, bw)

    def __rsub__(self, other):
        c = _asarray(other)

        def bw(g, a=self):
            a._accum(-g)
        return self._new("rsub", c - self.value, bw)

    def __mul__(self, other):
        if _defer(other):
            return NotImplemented
        if isinstance(other, Var):
            def bw(g, a=self, b=other):
                a._accum(g * b.value)
                b._accum(g * a.value)
            return self._new("mul", self.value * other.value, bw)
        c = _asarray(other)

        def bw(g, a=self):
            a._accum(g * c)
        return self._new("mul", self.value * c, bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if _defer(other):
            return NotImplemented
        if isinstance(other, Var):
            def bw(g, a=self, b=other):
                a._accum(g / b.value)
                b._accum(-g * a.value / (b.value * b.value))
            return self._new("div", self.value / other.value, bw)
        c = _asarray(other)

        def bw(g, a=self):
            a._accum(g / c)
        return self._new("div", self.value / c, bw)

    def __rtruediv__(self, other):
        c = _asarray(other)

        def bw(g, a=self):
            a._accum(-g * c / (a.value * a.value))
        return self._new("rdiv", c / self.value, bw)

    def __neg__(self):
        def bw(g, a=self):
            a._accum(-g)
        return self._new("neg", -self.value, bw)

    def __pow__(self, exponent):
        if isinstance(exponent, Var):
            raise UsageError("Var ** Var is not a supported primitive")
        e = float(exponent)

        def bw(g, a=self):
            a._accum(g * e * a.value ** (e - 1.0))
        return self._new("pow", self.value ** e, bw)

    def __matmul__(self, other):
        if _defer(other):
            return NotImplemented
        if isinstance(other, Var):
            out, ga, gb = _matmul_parts(self.value, other.value)

            def bw(g, a=self, b=other, ga=ga, gb=gb):
                a._accum(_unbroadcast(ga(g), a.value.shape))
                b._accum(_unbroadcast(gb(g), b.value.shape))
            return self._new("matmul", out, bw)
        out, ga, _ = _matmul_parts(self.value, _asarray(other))

        def bw(g, a=self, ga=ga):
            a._accum(_unbroadcast(ga(g), a.value.shape))
        return self._new("matmul", out, bw)

    def __rmatmul__(self, other):
        out, _, gb = _matmul_parts(_asarray(other), self.value)

        def bw(g, b=self, gb=gb):
            b._accum(_unbroadcast(gb(g), b.value.shape))
        return self._new("rmatmul", out, bw)

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        out_val = np.exp(self.value)

        def bw(g, a=self, v=out_val):
            a._accum(g * v)
        return self._new("exp", out_val, bw)

    def log(self):
        def bw(g, a=self):
            a._accum(g / a.value)
        return self._new("log", np.log(self.value), bw)

    def sin(self):
        def bw(g, a=self):
            a._accum(g * np.cos(a.value))
        return self._new("sin", np.sin(self.value), bw)

    def cos(self):
        def bw(g, a=self):
            a._accum(-g * np.sin(a.value))
        return self._new("cos", np.cos(self.value), bw)

    def sqrt(self):
        out_val = np.sqrt(self.value)

        def bw(g, a=self, v=out_val):
            a._accum(g / (2.0 * v))
        return self._new("sqrt", out_val, bw)

    def softplus(self):
        v = self.value
        out_val = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))

        def bw(g, a=self):
            a._accum(g * _sigmoid_value(a.value))
        return self._new("softplus", out_val, bw)

    def sigmoid(self):
        out_val = _sigmoid_value(self.value)

        def bw(g, a=self, s=out_val):
            a._accum(g * s * (1.0 - s))
        return self._new("sigmoid", out_val, bw)

    def abs(self):
        def bw(g, a=self):
            a._accum(g * np.where(a.value >= 0.0, 1.0, -1.0))
        return self._new("abs", np.abs(self.value), bw)

    def __abs__(self):
        return self.abs()

    # min/max/clip use the one-sided rule: at a tie the derivative goes to
    # the first argument (and clip counts boundary values as interior).

    def maximum(self, other):
        if _defer(other):
            return NotImplemented
        ov = other.value if isinstance(other, Var) else _asarray(other)
        mask = self.value >= ov
        if isinstance(other, Var):
            def bw(g, a=self, b=other, m=mask):
                a._accum(g * m)
                b._accum(g * ~m)
            return self._new("maximum", np.where(mask, self.value, ov), bw)

        def bw(g, a=self, m=mask):
            a._accum(g * m)
        return self._new("maximum", np.where(mask, self.value, ov), bw)

    def minimum(self, other):
        if _defer(other):
            return NotImplemented
        ov = other.value if isinstance(other, Var) else _asarray(other)
        mask = self.value <= ov
        if isinstance(other, Var):
            def bw(g, a=self, b=other, m=mask):
                a._accum(g * m)
                b._accum(g * ~m)
            return self._new("minimum", np.where(mask, self.value, ov), bw)

        def bw(g, a=self, m=mask):
            a._accum(g * m)
        return self._new("minimum", np.where(mask, self.value, ov), bw)

    def clip(self, lo, hi):
        mask = (self.value >= lo) & (self.value <= hi)

        def bw(g, a=self, m=mask):
            a._accum(g * m)
        return self._new("clip", np.clip(self.value, lo, hi), bw)

    @staticmethod
    def where(mask, a, b):
        """Select elementwise; gradient flows only into the taken branch."""
        if isinstance(a, Var):
            tape, av = a.tape, a.value
            bv = b.value if isinstance(b, Var) else _asarray(b)
        else:
            tape, bv = b.tape, b.value
            av = _asarray(a)
        mask = np.asarray(mask, dtype=bool)

        def bw(g, m=mask, xa=a, xb=b):
            if isinstance(xa, Var):
                xa._accum(g * m)
            if isinstance(xb, Var):
                xb._accum(g * ~m)
        return Var(_check("where", np.where(mask, av, bv)), tape, op="where", bw=bw)

    # -- structural ops -----------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def bw(g, a=self, ax=axis, kd=keepdims):
            if ax is not None and not kd:
                g = np.expand_dims(g, ax)
            a._accum(np.broadcast_to(g, a.value.shape))
        return self._new("sum", self.value.sum(axis=axis, keepdims=keepdims), bw)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else np.prod(
            [self.value.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def cumsum(self, axis=-1):
        def bw(g, a=self, ax=axis):
            rev = np.flip(np.cumsum(np.flip(g, ax), axis=ax), ax)
            a._accum(rev)
        return self._new("cumsum", np.cumsum(self.value, axis=axis), bw)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def bw(g, a=self):
            a._accum(g.reshape(a.value.shape))
        return self._new("reshape", self.value.reshape(shape), bw)

    def broadcast_to(self, shape):
        def bw(g, a=self):
            a._accum(_unbroadcast(g, a.value.shape))
        return self._new("broadcast", np.broadcast_to(self.value, shape).copy(), bw)

    def __getitem__(self, key):
        def bw(g, a=self, k=key):
            full = np.zeros_like(a.value)
            full[k] += g
            a._accum(full)
        return self._new("getitem", self.value[key], bw)

    @staticmethod
    def concat(parts, axis=-1):
        vs = [p.value if isinstance(p, Var) else _asarray(p) for p in parts]
        tape = next(p.tape for p in parts if isinstance(p, Var))
        sizes = [v.shape[axis] for v in vs]
        offsets = np.cumsum([0] + sizes)

        def bw(g, ps=parts, offs=offsets, ax=axis):
            for p, lo, hi in zip(ps, offs[:-1], offs[1:]):
                if isinstance(p, Var):
                    idx = [slice(None)] * g.ndim
                    idx[ax] = slice(lo, hi)
                    p._accum(g[tuple(idx)])
        return Var(_check("concat", np.concatenate(vs, axis=axis)), tape, op="concat", bw=bw)


def _sigmoid_value(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _matmul_parts(av, bv):
    """Matmul forward value plus closures for both operand gradients.

    Mirrors numpy's 1-D promotion (vector -> row or column) so the
    backward closures see uniform >=2-D shapes.
    """
    a1, b1 = av.ndim == 1, bv.ndim == 1
    a2 = av[None, :] if a1 else av
    b2 = bv[:, None] if b1 else bv
    out = a2 @ b2
    if a1 and b1:
        out = out[..., 0, 0]
    elif a1:
        out = out[..., 0, :]
    elif b1:
        out = out[..., 0]

    def expand_g(g):
        if a1 and b1:
            return g[..., None, None]
        if a1:
            return g[..., None, :]
        if b1:
            return g[..., None]
        return g

    def ga(g):
        r = expand_g(g) @ np.swapaxes(b2, -1, -2)
        return r[..., 0, :] if a1 else r

    def gb(g):
        r = np.swapaxes(a2, -1, -2) @ expand_g(g)
        return r[..., 0] if b1 else r

    return out, ga, gb

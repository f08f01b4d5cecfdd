"""Derivative drivers: jvp, gradient, hessian, backward.

``f`` is any callable built from the supported primitives that maps a
point (given as a trailing-axis coordinate array, possibly dual-lifted)
to a scalar or vector. Directions are batched through a leading axis on
the tangent, which is why generic code indexes and reduces from the
right.
"""

from __future__ import annotations

import numpy as np

from .dual import Dual2Scalar, DualScalar, primal, tangent_of
from .tape import UsageError

__all__ = ["jvp", "gradient", "hessian", "backward", "grad_and_hessian_entries"]


def jvp(f, x, u):
    """Directional derivative Df(x)[u] of f: R^n -> R^m."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)):
        raise UsageError("direction must be finite")
    out = f(DualScalar(x, u))
    return tangent_of(out, like=primal(out))


def gradient(f, x):
    """Gradient of scalar f at x, via one multi-direction forward pass.

    The result components stay differentiable w.r.t. any Vars captured by
    ``f`` (the tangent coefficients are themselves recorded on the tape).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    dirs = np.eye(n).reshape((n,) + (1,) * (x.ndim - 1) + (n,))
    out = f(DualScalar(x, dirs))
    t = out.tangent if isinstance(out, DualScalar) else 0.0
    if isinstance(t, float) and t == 0.0:
        return np.zeros_like(x)
    return t


def _pair_directions(n):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    dirs = np.zeros((n + len(pairs), n))
    dirs[:n] = np.eye(n)
    for k, (i, j) in enumerate(pairs):
        dirs[n + k, i] = 1.0
        dirs[n + k, j] = 1.0
    return pairs, dirs


def hessian(f, x):
    """nxn Hessian of scalar f, from second-order jets.

    Runs one Dual2 pass with the n axis directions and the n(n-1)/2
    pairwise direction sums stacked on a leading axis; off-diagonal
    entries come from the polarization identity
    uᵀHv = (D²_{u+v} - D²_u - D²_v) / 2, so the output is exactly
    symmetric by construction.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    pairs, dirs = _pair_directions(n)
    dirs = dirs.reshape((n + len(pairs),) + (1,) * (x.ndim - 1) + (n,))
    out = f(Dual2Scalar(x, dirs, 0.0))
    d2 = out.second if isinstance(out, Dual2Scalar) else 0.0
    base = x.shape[:-1]
    if isinstance(d2, float) and d2 == 0.0:
        return np.zeros(base + (n, n))
    d2 = np.asarray(d2)
    h = np.zeros(base + (n, n))
    for i in range(n):
        h[..., i, i] = d2[i]
    for k, (i, j) in enumerate(pairs):
        hij = 0.5 * (d2[n + k] - d2[i] - d2[j])
        h[..., i, j] = hij
        h[..., j, i] = hij
    return h


def grad_and_hessian_entries(f, x):
    """One Dual2 pass returning (value, grad list, hessian entry dict).

    Unlike :func:`hessian` this keeps the coefficients in whatever algebra
    ``f`` produced (e.g. tape Vars), so curvature losses built from them
    remain parameter-differentiable. ``grad`` has n entries and ``hess``
    maps (i, j) with i <= j to the mixed second derivative, each shaped
    like f's output.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    pairs, dirs = _pair_directions(n)
    dirs = dirs.reshape((n + len(pairs),) + (1,) * (x.ndim - 1) + (n,))
    out = f(Dual2Scalar(x, dirs, 0.0))
    base = np.shape(primal(out.value))

    def take(coeff, k):
        if isinstance(coeff, float):  # canonical zero (affine/constant map)
            return np.zeros(base)
        entry = coeff[k]
        if np.shape(primal(entry)) != base:
            entry = _broadcast(entry, base)
        return entry

    grad = [take(out.first, k) for k in range(n)]
    hess = {(i, i): take(out.second, i) for i in range(n)}
    for k, (i, j) in enumerate(pairs):
        hess[(i, j)] = (take(out.second, n + k) - hess[(i, i)] - hess[(j, j)]) * 0.5
    return out.value, grad, hess


def _broadcast(x, shape):
    if isinstance(x, np.ndarray):
        return np.broadcast_to(x, shape)
    return x.broadcast_to(shape)


def backward(tape, output):
    """Parameter gradients of a recorded scalar; see Tape.backward."""
    return tape.backward(output)

"""Ray discretization and the rendering quadratures.

Color, depth, accumulated opacity, and rendered normals all share the
weights w_i = T_i * alpha_i with alpha_i = 1 - exp(-sigma_i * delta_i)
and T_i the transmittance. T is computed as exp of the exclusive running
sum of sigma*delta, which telescopes to the product of (1 - alpha_j) and
stays cheap to differentiate.

Derivatives with respect to the ray origin hold the sample parameters
t_i fixed (the sample points move rigidly with the ray), which is what
the origin gradient of the rendered depth means here.

Rendering accepts a RadianceFieldModel directly, or any "renderable"
adapter exposing features / geometry / density / color (SDF models are
wrapped by curvature.SdfRenderable, which maps signed distance to
density).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.dual import DualScalar, primal
from .autodiff.tape import UsageError, NonFiniteError
from .fields import EPS_NORMAL, RadianceFieldModel


@dataclass
class SampleSet:
    """Per-ray (or batched, trailing-axis N) quadrature samples.

    ``deltas`` is stored explicitly: interior entries are the t spacings
    and the last entry is t_far - t_N.
    """

    t: np.ndarray
    deltas: np.ndarray
    sigma: np.ndarray
    color: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        if t.shape[-1] < 1:
            raise UsageError("SampleSet needs at least one sample")
        if np.any(np.diff(t, axis=-1) <= 0):
            raise UsageError("sample t values must be strictly increasing")
        if np.any(np.asarray(self.deltas) <= 0):
            raise UsageError("sample deltas must be positive")


@dataclass
class RenderOutput:
    color: Optional[np.ndarray]
    depth: np.ndarray
    opacity: np.ndarray
    normal: Optional[np.ndarray] = None
    depth_derivs: Optional[np.ndarray] = None   # (K, ...) origin-directional
    normal_derivs: Optional[np.ndarray] = None  # (K, ..., 3)


class RadianceRenderable:
    """Adapter giving the renderer a uniform surface over field models."""

    normal_sign = -1.0  # normals point against the density gradient

    def __init__(self, model: RadianceFieldModel):
        self.model = model

    def features(self, x, params=None):
        return self.model.features(x, params)

    def geometry(self, h, params=None):
        """The scalar field whose spatial gradient defines normals."""
        return self.model.density_from_features(h, params)

    def density(self, geom):
        return geom

    def color(self, h, v, params=None):
        return self.model.color_from_features(h, v, params)


def as_renderable(model):
    if isinstance(model, RadianceFieldModel):
        return RadianceRenderable(model)
    if hasattr(model, "geometry") and hasattr(model, "density"):
        return model
    raise UsageError(f"{type(model).__name__} is not renderable; wrap SDF models "
                     "with curvature.SdfRenderable")


def sample_ray(ray, n, mode="uniform", seed=0):
    """Sample t values for one ray: bin midpoints, or one draw per bin."""
    t, d = sample_batch(ray.t_near, ray.t_far, 1, n, mode, seed)
    return t[0], d[0]


def sample_batch(near, far, count, n, mode="uniform", seed=0):
    """(t, deltas) of shape (count, n); deterministic for a given seed."""
    if n < 2:
        raise UsageError("need at least 2 samples per ray")
    edges = np.linspace(near, far, n + 1)
    if mode == "uniform":
        t = np.broadcast_to(0.5 * (edges[:-1] + edges[1:]), (count, n)).copy()
    elif mode == "stratified":
        rng = np.random.default_rng(seed)
        u = rng.random((count, n))
        t = edges[:-1] + u * (edges[1:] - edges[:-1])
    else:
        raise UsageError(f"unknown sampling mode '{mode}'")
    deltas = np.diff(t, axis=-1)
    deltas = np.concatenate([deltas, far - t[:, -1:]], axis=-1)
    return t, deltas


def composite_weights(sigma, deltas):
    """Per-sample weights T_i * alpha_i; generic over scalar algebras."""
    sd = sigma * deltas
    alpha = 1.0 - ops.exp(-sd)
    excl = sd.cumsum(axis=-1) - sd  # sum over j < i
    return ops.exp(-excl) * alpha


def composite(samples: SampleSet) -> RenderOutput:
    """Quadrature of one SampleSet (plain arrays in, plain arrays out)."""
    for name in ("sigma", "color"):
        arr = np.asarray(getattr(samples, name)) if getattr(samples, name) is not None else None
        if arr is not None and not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            sample_axis = arr.ndim - 1 if name == "sigma" else arr.ndim - 2
            raise NonFiniteError(f"composite.{name}", f"sample index {int(bad[sample_axis])}")
    w = composite_weights(np.asarray(samples.sigma, dtype=np.float64),
                          np.asarray(samples.deltas, dtype=np.float64))
    depth = (w * samples.t).sum(axis=-1)
    opacity = w.sum(axis=-1)
    color = (w[..., None] * samples.color).sum(axis=-2) if samples.color is not None else None
    normal = (w[..., None] * samples.normal).sum(axis=-2) if samples.normal is not None else None
    return RenderOutput(color=color, depth=depth, opacity=opacity, normal=normal)


def _sample_positions(o, v, t):
    return o[..., None, :] + t[..., :, None] * v[..., None, :]


def _broadcast_dirs(v, t):
    return np.broadcast_to(v[..., None, :], v.shape[:-1] + (t.shape[-1], 3))


def render_depth_derivative(model, ray, u, n_samples=64, params=None):
    """d(depth)/d(origin) . u for one ray, with fixed sample t values."""
    rnd = as_renderable(model)
    t, deltas = sample_ray(ray, n_samples)
    x = _sample_positions(ray.o[None, :], ray.v[None, :], t[None, :])
    xd = DualScalar(x, np.asarray(u, dtype=np.float64))
    sigma = rnd.density(rnd.geometry(rnd.features(xd, params), params))
    w = composite_weights(sigma, deltas[None, :])
    depth = (w * t[None, :]).sum(axis=-1)
    if not isinstance(depth, DualScalar) or isinstance(depth.tangent, float):
        return 0.0
    return float(primal(depth.tangent).reshape(-1)[0])


def depth_with_origin_tangents(rnd, o, v, t, deltas, dirs, params=None):
    """Rendered depth as a dual (value (B,), tangent (K, B)) along ``dirs``.

    dirs: (K, 3) or per-ray (K, B, 3). Also returns opacity (dual) and the
    trunk features (dual) so the color path can reuse the forward pass.
    """
    x = _sample_positions(o, v, t)
    dirs = np.asarray(dirs, dtype=np.float64)
    tan = dirs[:, :, None, :] if dirs.ndim == 3 else dirs[:, None, None, :]
    h = rnd.features(DualScalar(x, tan), params)
    sigma = rnd.density(rnd.geometry(h, params))
    w = composite_weights(sigma, deltas)
    depth = (w * t).sum(axis=-1)
    opacity = w.sum(axis=-1)
    return depth, opacity, h


def normal_with_origin_tangents(rnd, o, v, t, deltas, dirs, params=None):
    """Raw (unnormalized-sum) rendered normal with origin tangents.

    Returns (normal_parts, depth, opacity, features): normal_parts is a
    list of 3 duals (value (B,), tangent (K, B)). Per-sample normals with
    geometry-gradient norm below EPS_NORMAL contribute zero.
    """
    x = _sample_positions(o, v, t)
    dirs = np.asarray(dirs, dtype=np.float64)
    inner = np.eye(3).reshape(3, 1, 1, 1, 3)
    outer = dirs[:, :, None, :] if dirs.ndim == 3 else dirs[:, None, None, :]
    xd = DualScalar(DualScalar(x, inner), DualScalar(outer, 0.0))
    h = rnd.features(xd, params)
    geom = rnd.geometry(h, params)
    # geom.value: inner dual (F, grad F); geom.tangent: (D_u F, D_u grad F)
    geom_flat = DualScalar(geom.value.value, geom.tangent.value)
    g = [DualScalar(geom.value.tangent[a, 0], geom.tangent.tangent[a]) for a in range(3)]
    norm_sq = g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
    okmask = primal(norm_sq) > EPS_NORMAL ** 2
    inv = 1.0 / ops.sqrt(ops.maximum(norm_sq, EPS_NORMAL ** 2))
    n_parts = [ops.where(okmask, gk * (inv * rnd.normal_sign), 0.0) for gk in g]
    sigma = rnd.density(geom_flat)
    w = composite_weights(sigma, deltas)
    depth = (w * t).sum(axis=-1)
    opacity = w.sum(axis=-1)
    normal_parts = [(w * nk).sum(axis=-1) for nk in n_parts]
    return normal_parts, depth, opacity, h


def render_rays(model, o, v, t, deltas, params=None, want_normal=False, deriv_dirs=None):
    """Render a ray batch to plain arrays (RenderOutput).

    ``deriv_dirs`` (K, 3) or (K, B, 3) additionally fills depth_derivs and,
    with want_normal, normal_derivs.
    """
    rnd = as_renderable(model)
    o = np.asarray(o, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    vdirs = _broadcast_dirs(v, t)

    if deriv_dirs is not None:
        if want_normal:
            parts, depth, opacity, h = normal_with_origin_tangents(
                rnd, o, v, t, deltas, deriv_dirs, params)
            hval = h.value.value
            normal = np.stack([primal(p.value) for p in parts], axis=-1)
            nder = np.stack([primal(p.tangent) for p in parts], axis=-1)
        else:
            depth, opacity, h = depth_with_origin_tangents(
                rnd, o, v, t, deltas, deriv_dirs, params)
            hval = h.value
            normal = nder = None
        color = _composite_color(rnd, hval, vdirs, t, deltas, params)
        return RenderOutput(color=color, depth=primal(depth.value), opacity=primal(opacity.value),
                            normal=normal, depth_derivs=primal(depth.tangent),
                            normal_derivs=nder)

    if want_normal:
        x = _sample_positions(o, v, t)
        xd = DualScalar(x, np.eye(3).reshape(3, 1, 1, 3))
        h = rnd.features(xd, params)
        geom = rnd.geometry(h, params)
        grad = np.stack([geom.tangent[a] for a in range(3)], axis=-1)  # (B, N, 3)
        nsq = np.sum(grad * grad, axis=-1)
        nrm = rnd.normal_sign * grad / np.sqrt(np.maximum(nsq, EPS_NORMAL ** 2))[..., None]
        nrm = np.where((nsq > EPS_NORMAL ** 2)[..., None], nrm, 0.0)
        sigma = rnd.density(geom.value)
        hval = h.value
    else:
        h = rnd.features(_sample_positions(o, v, t), params)
        sigma = rnd.density(rnd.geometry(h, params))
        nrm = None
        hval = h
    w = composite_weights(sigma, deltas)
    color_samples = rnd.color(hval, vdirs, params)
    return RenderOutput(
        color=(w[..., None] * color_samples).sum(axis=-2),
        depth=(w * t).sum(axis=-1),
        opacity=w.sum(axis=-1),
        normal=(w[..., None] * nrm).sum(axis=-2) if want_normal else None,
    )


def _composite_color(rnd, hval, vdirs, t, deltas, params):
    sigma = primal(rnd.density(rnd.geometry(hval, params)))
    w = composite_weights(sigma, deltas)
    c = rnd.color(hval, vdirs, params)
    return (w[..., None] * c).sum(axis=-2)


def render_view(model, cam, n_samples=64, params=None, want_normal=True, chunk=2048,
                mode="uniform", seed=0):
    """Render full maps for one camera: rgb (H,W,3), depth, opacity, normal."""
    from .cameras import rays_for_pixels

    h, wid = cam.height, cam.width
    ys, xs = np.mgrid[0:h, 0:wid]
    xy = np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(np.float64)
    rgb = np.zeros((h * wid, 3))
    depth = np.zeros(h * wid)
    opac = np.zeros(h * wid)
    normal = np.zeros((h * wid, 3)) if want_normal else None
    for lo in range(0, xy.shape[0], chunk):
        sel = slice(lo, min(lo + chunk, xy.shape[0]))
        o, v, _, _ = rays_for_pixels(cam, xy[sel])
        t, deltas = sample_batch(cam.near, cam.far, o.shape[0], n_samples, mode, seed)
        out = render_rays(model, o, v, t, deltas, params=params, want_normal=want_normal)
        rgb[sel] = out.color
        depth[sel] = out.depth
        opac[sel] = out.opacity
        if want_normal:
            normal[sel] = out.normal
    return RenderOutput(
        color=rgb.reshape(h, wid, 3),
        depth=depth.reshape(h, wid),
        opacity=opac.reshape(h, wid),
        normal=normal.reshape(h, wid, 3) if want_normal else None,
    )

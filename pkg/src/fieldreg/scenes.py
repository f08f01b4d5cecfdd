"""Analytic SDF scenes: exact ground truth for datasets and oracles.

Primitives are exact signed distance functions combined by a smooth
(exponential) min, so the scene SDF is differentiable by the package's
own autodiff; ground-truth normals are its normalized gradient. The
oracle renderer sphere-traces the exact SDF and shades Lambertian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops, gradient
from .autodiff.dual import primal, DualScalar
from .autodiff.tape import UsageError
from .cameras import Camera, look_at, rays_for_pixels


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    albedo: tuple = (0.8, 0.3, 0.3)

    def sdf(self, x):
        d = x - np.asarray(self.center, dtype=np.float64)
        return ops.sqrt((d * d).sum(axis=-1)) - self.radius


@dataclass(frozen=True)
class RoundedBox:
    center: tuple
    half_extents: tuple
    rounding: float = 0.0
    albedo: tuple = (0.3, 0.5, 0.8)

    def sdf(self, x):
        q = ops.absolute(x - np.asarray(self.center, dtype=np.float64)) \
            - np.asarray(self.half_extents, dtype=np.float64)
        outside = ops.maximum(q, 0.0)
        outside = ops.sqrt((outside * outside).sum(axis=-1) + 1e-300)
        qx, qy, qz = q[..., 0], q[..., 1], q[..., 2]
        inside = ops.minimum(ops.maximum(qx, ops.maximum(qy, qz)), 0.0)
        return outside + inside - self.rounding


@dataclass(frozen=True)
class Plane:
    normal: tuple
    offset: float = 0.0
    albedo: tuple = (0.6, 0.6, 0.6)

    def __post_init__(self):
        n = np.linalg.norm(np.asarray(self.normal, dtype=np.float64))
        if abs(n - 1.0) > 1e-9:
            raise UsageError("plane normal must be unit length")

    def sdf(self, x):
        return (x * np.asarray(self.normal, dtype=np.float64)).sum(axis=-1) - self.offset


@dataclass(frozen=True)
class AnalyticScene:
    primitives: tuple
    blend_sharpness: float = 0.0  # 0 disables blending (hard min)
    light_direction: tuple = (0.4, -0.5, 0.77)
    ambient: float = 0.1

    def __post_init__(self):
        if len(self.primitives) == 0:
            raise UsageError("scene needs at least one primitive")

    @property
    def light(self):
        l = np.asarray(self.light_direction, dtype=np.float64)
        return l / np.linalg.norm(l)

    def centroid(self):
        centers = [np.asarray(p.center) for p in self.primitives if hasattr(p, "center")]
        return np.mean(centers, axis=0) if centers else np.zeros(3)

    def bounding_radius(self):
        c = self.centroid()
        r = 1.0
        for p in self.primitives:
            if isinstance(p, Sphere):
                r = max(r, np.linalg.norm(np.asarray(p.center) - c) + p.radius)
            elif isinstance(p, RoundedBox):
                r = max(r, np.linalg.norm(np.asarray(p.center) - c)
                        + np.linalg.norm(p.half_extents) + p.rounding)
        return r


def scene_sdf(scene: AnalyticScene, x):
    """Exact signed distance (smooth-min blended for multiple primitives)."""
    dists = [p.sdf(x) for p in scene.primitives]
    if len(dists) == 1:
        return dists[0]
    k = scene.blend_sharpness
    if k <= 0.0:
        out = dists[0]
        for d in dists[1:]:
            out = ops.minimum(out, d)
        return out
    # exponential smooth min; the shift m cancels analytically, so taking
    # it from primal values keeps derivatives exact
    m = primal(dists[0])
    for d in dists[1:]:
        m = np.minimum(m, primal(d))
    acc = 0.0
    for d in dists:
        acc = acc + ops.exp((m - d) * k)
    return m - ops.log(acc) * (1.0 / k)


def scene_albedo(scene: AnalyticScene, x):
    """Per-point albedo: softmin-weighted between primitives."""
    x = np.asarray(x, dtype=np.float64)
    dists = np.stack([primal(p.sdf(x)) for p in scene.primitives])  # (P, ...)
    albedos = np.stack([np.asarray(p.albedo, dtype=np.float64)
                        for p in scene.primitives])  # (P, 3)
    k = scene.blend_sharpness
    if k <= 0.0 or len(scene.primitives) == 1:
        pick = np.argmin(dists, axis=0)
        return albedos[pick]
    w = np.exp((dists.min(axis=0) - dists) * k)
    w /= w.sum(axis=0)
    return np.moveaxis(np.tensordot(albedos.T, w, axes=1), 0, -1)


def scene_normal_exact(scene: AnalyticScene, x):
    """Unit normal of the scene SDF via its own gradient."""
    x = np.asarray(x, dtype=np.float64)
    dirs = np.eye(3).reshape((3,) + (1,) * (x.ndim - 1) + (3,))
    out = scene_sdf(scene, DualScalar(x, dirs))
    g = np.moveaxis(primal(out.tangent), 0, -1)
    return g / np.maximum(np.linalg.norm(g, axis=-1, keepdims=True), 1e-12)


def sphere_trace(scene: AnalyticScene, o, v, t_near, t_far, max_steps=256, tol=1e-5):
    """March rays against the exact SDF. Returns (t, hit mask)."""
    o = np.asarray(o, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    t = np.full(o.shape[0], float(t_near))
    hit = np.zeros(o.shape[0], dtype=bool)
    active = np.ones(o.shape[0], dtype=bool)
    for _ in range(max_steps):
        if not np.any(active):
            break
        x = o[active] + t[active, None] * v[active]
        d = np.asarray(primal(scene_sdf(scene, x)))
        newly_hit = d < tol
        idx = np.flatnonzero(active)
        hit[idx[newly_hit]] = True
        t[idx] += np.where(newly_hit, 0.0, d)
        beyond = t[idx] > t_far
        active[idx[newly_hit | beyond]] = False
    t = np.minimum(t, t_far)
    return t, hit


def oracle_render_pixels(scene: AnalyticScene, cam: Camera, xy):
    """(rgb, depth, normal) ground truth for an (N, 2) pixel array.

    Lambertian shading albedo * max(0, n.l) + ambient * albedo; misses are
    black with depth t_far and zero normal.
    """
    o, v, _, _ = rays_for_pixels(cam, np.asarray(xy, dtype=np.float64))
    t, hit = sphere_trace(scene, o, v, cam.near, cam.far)
    n = np.zeros_like(o)
    rgb = np.zeros_like(o)
    depth = np.where(hit, t, cam.far)
    if np.any(hit):
        xh = o[hit] + t[hit, None] * v[hit]
        nh = scene_normal_exact(scene, xh)
        alb = scene_albedo(scene, xh)
        lam = np.maximum(0.0, nh @ scene.light)
        rgb[hit] = np.clip(alb * lam[:, None] + scene.ambient * alb, 0.0, 1.0)
        n[hit] = nh
    return rgb, depth, n


def oracle_render(scene: AnalyticScene, cam: Camera, pixel):
    """Single-pixel oracle: (rgb (3,), depth, normal (3,))."""
    rgb, depth, n = oracle_render_pixels(scene, cam, np.asarray(pixel, dtype=np.float64)[None, :])
    return rgb[0], float(depth[0]), n[0]


def oracle_render_view(scene: AnalyticScene, cam: Camera):
    """Full-image ground truth maps (rgb HxWx3, depth HxW, normal HxWx3)."""
    ys, xs = np.mgrid[0:cam.height, 0:cam.width]
    xy = np.stack([xs.ravel(), ys.ravel()], axis=-1).astype(np.float64)
    rgb, depth, n = oracle_render_pixels(scene, cam, xy)
    return (rgb.reshape(cam.height, cam.width, 3),
            depth.reshape(cam.height, cam.width),
            n.reshape(cam.height, cam.width, 3))


class SmoothSceneField:
    """Renderable with a closed-form smooth density built from the scene SDF
    via the Laplace transform. Used by oracle suites that need an analytic
    scene inside the volume renderer (no network anywhere)."""

    normal_sign = 1.0

    def __init__(self, scene: AnalyticScene, alpha=8.0, beta=0.08):
        self.scene = scene
        self.alpha = alpha
        self.beta = beta

    def features(self, x, params=None):
        return x

    def geometry(self, h, params=None):
        return scene_sdf(self.scene, h)

    def density(self, geom):
        from .curvature import sdf_to_density

        return sdf_to_density(geom, self.alpha, self.beta)

    def color(self, h, v, params=None):
        x = primal(h)
        return scene_albedo(self.scene, np.asarray(x))


# -- camera layout and dataset generation -------------------------------------

def _cone_directions(rng, center, half_angle, count):
    """Unit directions within a cone around ``center``."""
    out = []
    while len(out) < count:
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        if np.dot(d, center) >= np.cos(half_angle):
            out.append(d)
    return np.array(out)


def _directions_outside(rng, center, half_angle, count):
    out = []
    while len(out) < count:
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        if np.dot(d, center) < np.cos(half_angle):
            out.append(d)
    return np.array(out)


def camera_ring(scene: AnalyticScene, n_train, n_test, radius, resolution, seed,
                focal=None, cone_half_angle=np.deg2rad(30.0)):
    """Cameras on a sphere looking at the scene centroid: train views
    clustered inside a 60-degree cone, test views outside it."""
    if n_train < 1 or n_test < 0:
        raise UsageError("need at least one training view")
    if resolution < 1:
        raise UsageError("resolution must be >= 1")
    rng = np.random.default_rng(seed)
    target = scene.centroid()
    anchor = rng.normal(size=3)
    anchor /= np.linalg.norm(anchor)
    dirs_train = _cone_directions(rng, anchor, cone_half_angle, n_train)
    dirs_test = _directions_outside(rng, anchor, cone_half_angle, n_test)
    bound = scene.bounding_radius()
    near = max(radius - bound - 0.5, 0.05 * radius)
    far = radius + bound + 0.5
    focal = focal if focal is not None else float(resolution)
    cams = []
    for d in np.concatenate([dirs_train, dirs_test]) if n_test else dirs_train:
        pos = target + radius * d
        r = look_at(pos, target)
        cams.append(Camera(model="perspective", focal=focal,
                           principal=(resolution / 2, resolution / 2),
                           rotation=tuple(map(tuple, r)), position=tuple(pos),
                           width=resolution, height=resolution,
                           near=float(near), far=float(far)))
    return cams[:n_train], cams[n_train:]

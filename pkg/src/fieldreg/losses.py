"""Training losses: photometric error plus the depth/normal regularizers.

Depth regularization penalizes the squared norm of the image-plane depth
gradient with a hard differentiable clip at g_max. Three routes:

* simplified_ortho: per-ray orthographic simplification; only the origin
  gradient of the rendered depth enters, projected orthogonal to the ray.
* full_jacobian: chains the pixel->ray Jacobian of the actual camera.
* finite_difference: the patch-based neighbor-difference baseline.

All losses return literal sums over the supplied rays/pixels; the trainer
normalizes by batch size before weighting so configured weights stay
comparable across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import ops
from .autodiff.dual import primal
from .autodiff.tape import UsageError
from .cameras import pixel_jacobians, ray_frames, rays_for_pixels
from .rendering import (
    as_renderable, composite_weights, depth_with_origin_tangents,
    normal_with_origin_tangents, sample_batch, _sample_positions,
)

VARIANTS = ("simplified_ortho", "full_jacobian", "finite_difference")


@dataclass(frozen=True)
class LossConfig:
    lambda_depth: float = 2e-4
    g_max: float = 20.0
    lambda_normals: float = 0.0
    normals_clip: float = 20.0
    variant: str = "simplified_ortho"
    fd_step: float = 1.0  # pixel step of the finite-difference baseline

    def __post_init__(self):
        if self.lambda_depth < 0 or self.lambda_normals < 0:
            raise UsageError("loss weights must be >= 0")
        if self.g_max <= 0 or self.normals_clip <= 0:
            raise UsageError("clip thresholds must be > 0")
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant '{self.variant}'; pick one of {VARIANTS}")


@dataclass
class LossTerm:
    value: object  # scalar (float, or Var during training)
    clipped: int = 0


@dataclass
class LossReport:
    total: object
    terms: dict
    clipped: dict


@dataclass
class RayBatch:
    """A bundle of rays with ground truth and pixel provenance."""

    o: np.ndarray            # (B, 3)
    v: np.ndarray            # (B, 3) unit
    near: float
    far: float
    targets: Optional[np.ndarray] = None  # (B, 3)
    view: Optional[np.ndarray] = None     # (B,) view indices
    xy: Optional[np.ndarray] = None       # (B, 2) pixel coordinates
    frame_i: Optional[np.ndarray] = None
    frame_j: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.frame_i is None or self.frame_j is None:
            self.frame_i, self.frame_j = ray_frames(self.v)

    def __len__(self):
        return self.o.shape[0]


def loss_rgb(renders, targets):
    """Sum of squared color errors over the batch."""
    t = np.asarray(targets, dtype=np.float64)
    r_shape = np.shape(primal(renders))
    if r_shape != t.shape:
        raise UsageError(f"render/target shape mismatch: {r_shape} vs {t.shape}")
    diff = renders - t
    return (diff * diff).sum(axis=-1).sum(axis=-1)


def clip_sq(value, g_max):
    """Hard min against g_max; derivative is 1 below (and at) the threshold."""
    return ops.minimum(value, g_max)


def _default_samples(batch, n_samples, t, deltas):
    if t is None:
        t, deltas = sample_batch(batch.near, batch.far, len(batch), n_samples)
    return t, deltas


def loss_depth_simplified(model, batch: RayBatch, g_max=20.0, *, n_samples=64,
                          t=None, deltas=None, params=None, form="frame", stats=None):
    """Sum over rays of clip(|P_perp grad_o depth|^2, g_max).

    ``form='frame'`` takes the two frame inner products directly (two
    origin-tangent passes); ``form='projection'`` assembles the full
    origin gradient and subtracts the along-ray component. Both agree to
    round-off; the frame form is the cheap default.
    """
    rnd = as_renderable(model)
    t, deltas = _default_samples(batch, n_samples, t, deltas)
    if form == "frame":
        dirs = np.stack([batch.frame_i, batch.frame_j])  # (2, B, 3)
        depth, _, _ = depth_with_origin_tangents(rnd, batch.o, batch.v, t, deltas, dirs, params)
        g = depth.tangent
        value = g[0] * g[0] + g[1] * g[1]
    elif form == "projection":
        depth, _, _ = depth_with_origin_tangents(rnd, batch.o, batch.v, t, deltas, np.eye(3), params)
        g = depth.tangent  # (3, B)
        sq = g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
        along = g[0] * batch.v[:, 0] + g[1] * batch.v[:, 1] + g[2] * batch.v[:, 2]
        value = sq - along * along
    else:
        raise UsageError(f"unknown form '{form}'")
    if stats is not None:
        stats["clipped"] = int(np.sum(primal(value) > g_max))
    return clip_sq(value, g_max).sum(axis=-1)


def depth_with_direction_tangents(rnd, o, v, t, deltas, dirs, params=None):
    """Depth dual with tangents w.r.t. the ray *direction* along dirs.

    With fixed sample parameters, x_i = o + t_i v, so a direction tilt u
    moves sample i by t_i * u.
    """
    x = _sample_positions(o, v, t)
    dirs = np.asarray(dirs, dtype=np.float64)
    base = dirs[:, :, None, :] if dirs.ndim == 3 else dirs[:, None, None, :]
    tan = base * t[None, :, :, None]
    from .autodiff.dual import DualScalar

    h = rnd.features(DualScalar(x, tan), params)
    sigma = rnd.density(rnd.geometry(h, params))
    w = composite_weights(sigma, deltas)
    return (w * t).sum(axis=-1)


def loss_depth_full(model, cam, pixels, g_max=20.0, *, n_samples=64,
                    t=None, deltas=None, params=None, stats=None):
    """Sum over pixels of clip(|J_C . grad_ray depth|^2, g_max) under the
    camera's true projection model."""
    rnd = as_renderable(model)
    pixels = np.asarray(pixels, dtype=np.float64)
    o, v, _, _ = rays_for_pixels(cam, pixels)
    if t is None:
        t, deltas = sample_batch(cam.near, cam.far, o.shape[0], n_samples)
    jac = pixel_jacobians(cam, pixels)          # (B, 2, 3)
    dirs = np.moveaxis(jac, 1, 0)               # (2, B, 3)
    if cam.model == "perspective":
        # pixels move the unit direction; chain through x_i = o + t_i v
        depth = depth_with_direction_tangents(rnd, o, v, t, deltas, dirs, params)
    else:
        depth, _, _ = depth_with_origin_tangents(rnd, o, v, t, deltas, dirs, params)
    g = depth.tangent
    value = g[0] * g[0] + g[1] * g[1]
    if stats is not None:
        stats["clipped"] = int(np.sum(primal(value) > g_max))
    return clip_sq(value, g_max).sum(axis=-1)


def loss_depth_regnerf(model, cam, patch, *, fd_step=1.0, n_samples=64,
                       params=None, stats=None):
    """Finite-difference depth baseline: squared differences against the
    right and down neighbor of every patch pixel (out-of-image neighbors
    are skipped). No clipping, per the displayed formula."""
    rnd = as_renderable(model)
    patch = np.asarray(patch, dtype=np.float64).reshape(-1, 2)
    offsets = np.array([[fd_step, 0.0], [0.0, fd_step]])
    coords = [patch]
    masks = []
    for off in offsets:
        nb = patch + off
        ok = (nb[:, 0] <= cam.width - 0.5) & (nb[:, 1] <= cam.height - 0.5) \
            & (nb[:, 0] >= -0.5) & (nb[:, 1] >= -0.5)
        coords.append(nb)
        masks.append(ok)
    allc = np.concatenate(coords, axis=0)
    uniq, inverse = np.unique(allc, axis=0, return_inverse=True)
    o, v, _, _ = rays_for_pixels(cam, uniq)
    t, deltas = sample_batch(cam.near, cam.far, o.shape[0], n_samples)
    h = rnd.features(_sample_positions(o, v, t), params)
    sigma = rnd.density(rnd.geometry(h, params))
    w = composite_weights(sigma, deltas)
    depth = (w * t).sum(axis=-1)
    b = patch.shape[0]
    d_center = depth[inverse[:b]]
    total = 0.0
    for k, ok in enumerate(masks):
        if not np.any(ok):
            continue
        d_nb = depth[inverse[(k + 1) * b:(k + 2) * b]]
        diff = (d_nb - d_center) * ok.astype(np.float64)
        total = total + (diff * diff).sum(axis=-1)
    if stats is not None:
        stats["clipped"] = 0
    return total


def loss_normals(model, batch: RayBatch, normals_clip=20.0, *, n_samples=64,
                 t=None, deltas=None, params=None, stats=None):
    """Sum over rays of clip(|J_n|_F^2, clip): Frobenius norm of the frame
    Jacobian of the raw rendered normal (orthographic simplification)."""
    rnd = as_renderable(model)
    t, deltas = _default_samples(batch, n_samples, t, deltas)
    dirs = np.stack([batch.frame_i, batch.frame_j])
    parts, _, _, _ = normal_with_origin_tangents(rnd, batch.o, batch.v, t, deltas, dirs, params)
    value = 0.0
    for p in parts:
        g = p.tangent  # (2, B)
        value = value + g[0] * g[0] + g[1] * g[1]
    if stats is not None:
        stats["clipped"] = int(np.sum(primal(value) > normals_clip))
    return clip_sq(value, normals_clip).sum(axis=-1)


KNOWN_TERMS = ("rgb", "depth", "normals", "eikonal", "curvature")


def compose_losses(cfg: LossConfig, terms, extra_weights=None):
    """Weighted total: rgb + lambda_depth * depth + lambda_normals * normals
    (+ any extra weighted terms, e.g. eikonal/curvature for SDF runs)."""
    weights = {"rgb": 1.0, "depth": cfg.lambda_depth, "normals": cfg.lambda_normals}
    weights.update(extra_weights or {})
    total = 0.0
    values, clipped = {}, {}
    for name, term in terms.items():
        if name not in KNOWN_TERMS or name not in weights:
            raise UsageError(f"unknown loss term '{name}'")
        value = term.value if isinstance(term, LossTerm) else term
        values[name] = value
        clipped[name] = term.clipped if isinstance(term, LossTerm) else 0
        total = total + weights[name] * value
    return LossReport(total=total, terms=values, clipped=clipped)

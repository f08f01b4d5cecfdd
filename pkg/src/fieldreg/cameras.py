"""Camera models, ray generation, per-ray frames, and the pixel-to-ray
Jacobian used by the full (non-simplified) depth regularizer.

Conventions (fixed for reproducible datasets): rays pass through pixel
centers (x + 0.5, y + 0.5), pixel y grows downward, the camera looks
along its +z axis with +x right and +y down. For orthographic cameras
``focal`` is reinterpreted as pixels per scene unit, so the image-plane
pixel pitch is 1/focal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff.tape import UsageError


@dataclass(frozen=True)
class Camera:
    model: str = "perspective"  # or "orthographic"
    focal: float = 64.0
    principal: tuple = (32.0, 32.0)  # (cx, cy) in pixels
    rotation: tuple = ((1, 0, 0), (0, 1, 0), (0, 0, 1))  # world-from-camera
    position: tuple = (0.0, 0.0, 0.0)
    width: int = 64
    height: int = 64
    near: float = 0.1
    far: float = 10.0

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3) or np.max(np.abs(r.T @ r - np.eye(3))) > 1e-10:
            raise UsageError("camera rotation must be orthonormal (within 1e-10)")
        if not self.near < self.far:
            raise UsageError("camera requires near < far")
        if self.focal <= 0:
            raise UsageError("camera requires focal > 0")
        if self.model not in ("perspective", "orthographic"):
            raise UsageError(f"unknown camera model '{self.model}'")

    @property
    def r(self):
        return np.asarray(self.rotation, dtype=np.float64)

    @property
    def t(self):
        return np.asarray(self.position, dtype=np.float64)

    def to_json(self):
        return {
            "model": self.model, "focal": self.focal, "principal": list(self.principal),
            "rotation": [list(row) for row in np.asarray(self.rotation).tolist()],
            "position": list(self.position), "width": self.width, "height": self.height,
            "near": self.near, "far": self.far,
        }

    @staticmethod
    def from_json(d):
        d = dict(d)
        d["principal"] = tuple(d["principal"])
        d["rotation"] = tuple(tuple(row) for row in d["rotation"])
        d["position"] = tuple(d["position"])
        return Camera(**d)


@dataclass(frozen=True)
class Ray:
    o: np.ndarray
    v: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        if abs(np.linalg.norm(self.v) - 1.0) > 1e-9:
            raise UsageError("ray direction must be unit length")
        if not self.t_near < self.t_far:
            raise UsageError("ray requires t_near < t_far")


@dataclass(frozen=True)
class RayFrame:
    i: np.ndarray
    j: np.ndarray


def _in_bounds(cam, x, y):
    return (-0.5 <= x <= cam.width - 0.5) and (-0.5 <= y <= cam.height - 0.5)


def pixel_to_ray(cam: Camera, x: float, y: float) -> Ray:
    """Ray through pixel center (x+0.5, y+0.5); sub-pixel coordinates allowed."""
    if not _in_bounds(cam, x, y):
        raise UsageError(f"pixel ({x}, {y}) outside {cam.width}x{cam.height} image")
    o, v = _rays_for_pixels(cam, np.array([[x, y]], dtype=np.float64))
    return Ray(o[0], v[0], cam.near, cam.far)


def _rays_for_pixels(cam: Camera, xy):
    """Vectorized ray origins/directions for an (N, 2) pixel array."""
    xy = np.asarray(xy, dtype=np.float64)
    u = xy[:, 0] + 0.5 - cam.principal[0]
    w = xy[:, 1] + 0.5 - cam.principal[1]
    if cam.model == "perspective":
        g = np.stack([u / cam.focal, w / cam.focal, np.ones_like(u)], axis=-1)
        v = g @ cam.r.T
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        o = np.broadcast_to(cam.t, v.shape).copy()
    else:
        pitch = 1.0 / cam.focal
        axes = cam.r  # columns: x right, y down, z forward
        o = cam.t + np.outer(u * pitch, axes[:, 0]) + np.outer(w * pitch, axes[:, 1])
        v = np.broadcast_to(axes[:, 2], o.shape).copy()
    return o, v


def rays_for_pixels(cam: Camera, xy):
    """(origins (N,3), directions (N,3), frames i (N,3), j (N,3)) for pixels."""
    o, v = _rays_for_pixels(cam, xy)
    i, j = ray_frames(v)
    return o, v, i, j


def project(cam: Camera, point):
    """World point -> pixel coordinates (inverse of pixel_to_ray up to depth)."""
    p = (np.asarray(point, dtype=np.float64) - cam.t) @ cam.r
    if cam.model == "perspective":
        x = cam.focal * p[..., 0] / p[..., 2] + cam.principal[0] - 0.5
        y = cam.focal * p[..., 1] / p[..., 2] + cam.principal[1] - 0.5
    else:
        x = p[..., 0] * cam.focal + cam.principal[0] - 0.5
        y = p[..., 1] * cam.focal + cam.principal[1] - 0.5
    return np.stack([x, y], axis=-1)


def ray_frame(v) -> RayFrame:
    """Orthonormal (i, j) completing unit v; any valid frame works downstream
    because the regularizers are frame-independent."""
    v = np.asarray(v, dtype=np.float64)
    if np.linalg.norm(v) == 0.0:
        raise UsageError("cannot build a frame for the zero vector")
    i, j = ray_frames(v[None, :])
    return RayFrame(i[0], j[0])


def ray_frames(v):
    """Vectorized frame construction for unit directions (N, 3).

    Picks the canonical axis least aligned with v (stable tie-break toward
    lower index), orthogonalizes, and sets j = v x i.
    """
    v = np.asarray(v, dtype=np.float64)
    a = np.abs(v)
    axis = np.argmin(a, axis=-1)
    e = np.eye(3)[axis]
    i = e - (np.sum(e * v, axis=-1, keepdims=True)) * v
    i /= np.linalg.norm(i, axis=-1, keepdims=True)
    j = np.cross(v, i)
    return i, j


def pixel_jacobian(cam: Camera, x: float, y: float):
    """2x3 Jacobian J_C of the pixel->ray map, with rows (d ray / dx, d ray / dy).

    For a perspective camera the pixel moves the unit direction; for an
    orthographic camera it translates the origin, so the rows are the
    image-plane axes scaled by the pixel pitch.
    """
    if not _in_bounds(cam, x, y):
        raise UsageError(f"pixel ({x}, {y}) outside image bounds")
    if cam.model == "orthographic":
        pitch = 1.0 / cam.focal
        return np.stack([cam.r[:, 0] * pitch, cam.r[:, 1] * pitch])
    u = x + 0.5 - cam.principal[0]
    w = y + 0.5 - cam.principal[1]
    g = np.array([u / cam.focal, w / cam.focal, 1.0])
    norm = np.linalg.norm(g)
    ghat = g / norm
    proj = (np.eye(3) - np.outer(ghat, ghat)) / norm
    dg = np.array([[1.0 / cam.focal, 0.0, 0.0], [0.0, 1.0 / cam.focal, 0.0]])
    return dg @ proj.T @ cam.r.T


def pixel_jacobians(cam: Camera, xy):
    """Vectorized pixel_jacobian for an (N, 2) pixel array -> (N, 2, 3)."""
    xy = np.asarray(xy, dtype=np.float64)
    n = xy.shape[0]
    if cam.model == "orthographic":
        pitch = 1.0 / cam.focal
        row = np.stack([cam.r[:, 0] * pitch, cam.r[:, 1] * pitch])
        return np.broadcast_to(row, (n, 2, 3)).copy()
    u = xy[:, 0] + 0.5 - cam.principal[0]
    w = xy[:, 1] + 0.5 - cam.principal[1]
    g = np.stack([u / cam.focal, w / cam.focal, np.ones(n)], axis=-1)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    ghat = g / norm
    proj = (np.eye(3) - ghat[:, :, None] * ghat[:, None, :]) / norm[:, :, None]
    dg = np.array([[1.0 / cam.focal, 0.0, 0.0], [0.0, 1.0 / cam.focal, 0.0]])
    return dg @ np.swapaxes(proj, -1, -2) @ cam.r.T


def look_at(position, target, up=(0.0, 0.0, 1.0)):
    """World-from-camera rotation for a camera at `position` looking at `target`.

    Camera axes: +z toward the target, +x right, +y down (consistent with
    the pixel conventions above).
    """
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    n = np.linalg.norm(right)
    if n < 1e-12:  # looking straight along up; pick any stable right
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        n = np.linalg.norm(right)
    right /= n
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)

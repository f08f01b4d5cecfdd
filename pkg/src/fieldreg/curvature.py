"""Implicit-surface regularizers: Eikonal constraint, mean and Gaussian
curvature of the zero level set, the clipped curvature loss, and surface
point sampling.

Curvatures come from the gradient g and Hessian H of the implicit
function F:

    mean     = -(|g|^2 tr(H) - g^T H g) / |g|^3   (expanded -div(g/|g|))
    gaussian = g . adj(H) . g / |g|^4

with adj the 3x3 adjugate in closed form (well defined even when H is
singular). Note the mean formula is the *sum* of the principal
curvatures (2/R on a sphere of radius R), not their average; both are
homogeneous of degree zero in F, so rescaling the field leaves them
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.dual import primal
from .autodiff.functional import grad_and_hessian_entries
from .autodiff.tape import UsageError

EPS_NORM = 1e-8


class SingularPointError(ArithmeticError):
    """The field gradient vanished where a curvature was requested."""


class DegenerateLossError(ArithmeticError):
    """Every supplied surface point was singular."""


@dataclass(frozen=True)
class CurvatureConfig:
    kind: str = "gaussian"  # or "mean"
    lambda_curv: float = 5e-4
    kappa_curv: float = 5.0
    lambda_sdf: float = 0.1  # Eikonal weight
    surface_sample_count: int = 256
    eikonal_sample_box: tuple = ((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5))

    def __post_init__(self):
        if self.kind not in ("mean", "gaussian"):
            raise UsageError(f"unknown curvature kind '{self.kind}'")
        if self.lambda_curv < 0 or self.lambda_sdf < 0:
            raise UsageError("curvature weights must be >= 0")
        if self.kappa_curv <= 0:
            raise UsageError("kappa_curv must be > 0")
        lo, hi = np.asarray(self.eikonal_sample_box[0]), np.asarray(self.eikonal_sample_box[1])
        if not np.all(hi > lo):
            raise UsageError("eikonal sample box is degenerate")


@dataclass
class SurfacePointSet:
    points: np.ndarray       # (M, 3)
    residuals: np.ndarray    # (M,) |F|
    requested: int = 0
    converged_warning: bool = False


def _sdf_fn(model, params):
    if hasattr(model, "sdf"):
        return lambda x: model.sdf(x, params)
    return model  # plain callable F(x)


def _grad_hess(model, x, params):
    """Value, gradient entries (3) and Hessian entries {(i,j)} at x (..., 3),
    kept generic so tape Vars survive for training."""
    return grad_and_hessian_entries(_sdf_fn(model, params), x)


def _curvature_terms(g, h):
    gsq = g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
    trace = h[(0, 0)] + h[(1, 1)] + h[(2, 2)]
    ghg = (g[0] * (h[(0, 0)] * g[0] + h[(0, 1)] * g[1] + h[(0, 2)] * g[2])
           + g[1] * (h[(0, 1)] * g[0] + h[(1, 1)] * g[1] + h[(1, 2)] * g[2])
           + g[2] * (h[(0, 2)] * g[0] + h[(1, 2)] * g[1] + h[(2, 2)] * g[2]))
    return gsq, trace, ghg


def _adjugate_quadratic(g, h):
    """g . adj(H) . g for symmetric 3x3 H given by its upper entries."""
    a, b, c = h[(0, 0)], h[(0, 1)], h[(0, 2)]
    d, e = h[(1, 1)], h[(1, 2)]
    f = h[(2, 2)]
    adj00 = d * f - e * e
    adj11 = a * f - c * c
    adj22 = a * d - b * b
    adj01 = c * e - b * f
    adj02 = b * e - c * d
    adj12 = b * c - a * e
    return (g[0] * g[0] * adj00 + g[1] * g[1] * adj11 + g[2] * g[2] * adj22
            + 2.0 * (g[0] * g[1] * adj01 + g[0] * g[2] * adj02 + g[1] * g[2] * adj12))


def mean_curvature(model, x, params=None):
    """Sum of principal curvatures at x (scalar for a single point)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    _, g, h = _grad_hess(model, np.atleast_2d(x), params)
    gsq, trace, ghg = _curvature_terms(g, h)
    gval = np.sqrt(primal(gsq))
    if np.any(gval <= EPS_NORM):
        raise SingularPointError(f"gradient norm {gval.min():.3e} at a curvature query")
    norm = ops.sqrt(gsq)
    k = -(gsq * trace - ghg) / (norm * norm * norm)
    return _maybe_scalar(k, single)


def gaussian_curvature(model, x, params=None):
    """Product of principal curvatures at x."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    _, g, h = _grad_hess(model, np.atleast_2d(x), params)
    gsq = g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
    gval = np.sqrt(primal(gsq))
    if np.any(gval <= EPS_NORM):
        raise SingularPointError(f"gradient norm {gval.min():.3e} at a curvature query")
    k = _adjugate_quadratic(g, h) / (gsq * gsq)
    return _maybe_scalar(k, single)


def _maybe_scalar(k, single):
    if single and not hasattr(k, "tape"):
        return float(primal(k)[0])
    return k


def eikonal_loss(model, box=((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5)), count=256,
                 seed=0, params=None):
    """Mean over box-uniform samples of (|grad F| - 1)^2."""
    if count < 1:
        raise UsageError("eikonal sample count must be >= 1")
    lo = np.asarray(box[0], dtype=np.float64)
    hi = np.asarray(box[1], dtype=np.float64)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(size=(count, 3)) * (hi - lo) + lo
    return eikonal_loss_at(model, pts, params)


def eikonal_loss_at(model, pts, params=None):
    from .autodiff.dual import DualScalar
    from .autodiff.functional import _broadcast

    pts = np.asarray(pts, dtype=np.float64)
    dirs = np.eye(3).reshape(3, 1, 3)
    out = _sdf_fn(model, params)(DualScalar(pts, dirs))
    g = out.tangent
    sq = g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
    if np.shape(primal(sq)) != pts.shape[:1]:  # constant-gradient fields
        sq = _broadcast(sq, pts.shape[:1])
    dev = ops.sqrt(sq) - 1.0
    return (dev * dev).sum(axis=-1) * (1.0 / len(pts))


def curvature_loss(model, pts: SurfacePointSet, cfg: CurvatureConfig, params=None,
                   stats=None):
    """Mean over surface points of min(|curvature|, kappa); singular points
    are excluded (and counted in stats)."""
    points = pts.points if isinstance(pts, SurfacePointSet) else np.asarray(pts)
    if len(points) == 0:
        raise DegenerateLossError("empty surface point set")
    _, g, h = _grad_hess(model, points, params)
    gsq = g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
    ok = primal(gsq) > EPS_NORM ** 2
    n_ok = int(np.sum(ok))
    if stats is not None:
        stats["singular"] = len(points) - n_ok
    if n_ok == 0:
        raise DegenerateLossError("all surface points singular")
    safe_gsq = ops.maximum(gsq, EPS_NORM ** 2)
    if cfg.kind == "gaussian":
        k = _adjugate_quadratic(g, h) / (safe_gsq * safe_gsq)
    else:
        _, trace, ghg = _curvature_terms(g, h)
        norm = ops.sqrt(safe_gsq)
        k = -(safe_gsq * trace - ghg) / (norm * norm * norm)
    clipped = ops.minimum(ops.absolute(k), cfg.kappa_curv)
    masked = ops.where(ok, clipped, 0.0)
    return masked.sum(axis=-1) * (1.0 / n_ok)


def sample_surface(model, count, seed=0, box=((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5)),
                   params=None, max_iters=20, tol=1e-4):
    """Newton-project box-uniform seeds onto {F = 0}.

    x <- x - F(x) grad F / |grad F|^2, up to max_iters steps; points with
    |F| < tol are kept. Fewer than count/2 survivors sets a warning flag.
    """
    from .autodiff.dual import DualScalar

    lo = np.asarray(box[0], dtype=np.float64)
    hi = np.asarray(box[1], dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(count, 3)) * (hi - lo) + lo
    f = _sdf_fn(model, params)
    dirs = np.eye(3).reshape(3, 1, 3)
    for _ in range(max_iters):
        out = f(DualScalar(x, dirs))
        val = primal(out.value)
        g = np.moveaxis(primal(out.tangent), 0, -1)
        if np.all(np.abs(val) < tol):
            break
        gsq = np.maximum(np.sum(g * g, axis=-1), EPS_NORM ** 2)
        x = x - (val / gsq)[:, None] * g
    resid = np.abs(primal(f(x)))
    keep = resid < tol
    pts = SurfacePointSet(points=x[keep], residuals=resid[keep], requested=count,
                          converged_warning=int(np.sum(keep)) < count / 2)
    return pts


def sdf_to_density(f_value, alpha=8.0, beta=0.1):
    """Laplace-CDF density transform: sigma = alpha * Psi_beta(-F).

    Psi_beta(s) = exp(s/beta)/2 for s <= 0, else 1 - exp(-s/beta)/2;
    monotone decreasing in F, -> alpha inside, -> 0 outside.
    """
    if alpha <= 0 or beta <= 0:
        raise UsageError("sdf_to_density needs alpha, beta > 0")
    s = -f_value
    e = ops.exp(-ops.absolute(s) * (1.0 / beta))
    psi = ops.where(primal(s) <= 0.0, 0.5 * e, 1.0 - 0.5 * e)
    return alpha * psi


class SdfRenderable:
    """Adapter so SDF models render through the volume integrator.

    Geometry is the signed distance (normals follow +grad F); density is
    its Laplace transform; color is the model's view-independent albedo
    head.
    """

    normal_sign = 1.0

    def __init__(self, model, alpha=8.0, beta=0.1):
        if alpha <= 0 or beta <= 0:
            raise UsageError("SdfRenderable needs alpha, beta > 0")
        self.model = model
        self.alpha = alpha
        self.beta = beta

    def features(self, x, params=None):
        return self.model.features(x, params)

    def geometry(self, h, params=None):
        return self.model.sdf_from_features(h, params)

    def density(self, geom):
        return sdf_to_density(geom, self.alpha, self.beta)

    def color(self, h, v, params=None):
        params = params if params is not None else self.model.params
        if "rgb.0.w" not in params:
            base = np.shape(primal(h))[:-1]
            return np.broadcast_to(np.array([0.7, 0.7, 0.7]), base + (3,)).copy()
        hc = ops.softplus(h @ params["rgb.0.w"] + params["rgb.0.b"])
        return ops.sigmoid(hc @ params["rgb.1.w"] + params["rgb.1.b"])


SDF_GRID_MAGIC = b"SDFGRID1"


def export_sdf_grid(model, path, box=((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5)),
                    dims=(64, 64, 64), params=None, chunk=65536):
    """Sample F on a regular grid and write the documented binary format:
    magic, 3 x uint32 dims, 6 x float64 box bounds, then dims-shaped
    float64 values in row-major (x slowest, z fastest) order."""
    lo = np.asarray(box[0], dtype=np.float64)
    hi = np.asarray(box[1], dtype=np.float64)
    axes = [np.linspace(lo[k], hi[k], dims[k]) for k in range(3)]
    xs, ys, zs = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=-1)
    f = _sdf_fn(model, params)
    vals = np.concatenate([np.asarray(primal(f(pts[i:i + chunk])))
                           for i in range(0, len(pts), chunk)])
    with open(path, "wb") as fh:
        fh.write(SDF_GRID_MAGIC)
        fh.write(np.asarray(dims, dtype="<u4").tobytes())
        fh.write(np.concatenate([lo, hi]).astype("<f8").tobytes())
        fh.write(vals.astype("<f8").tobytes())


def load_sdf_grid(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != SDF_GRID_MAGIC:
        raise UsageError("not an SDF grid file")
    dims = np.frombuffer(raw, dtype="<u4", count=3, offset=8)
    bounds = np.frombuffer(raw, dtype="<f8", count=6, offset=20)
    vals = np.frombuffer(raw, dtype="<f8", count=int(np.prod(dims)), offset=68)
    return vals.reshape(dims), (bounds[:3], bounds[3:])

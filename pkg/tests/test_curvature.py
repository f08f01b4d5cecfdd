import numpy as np
import pytest

from fieldreg.autodiff import ops
from fieldreg.curvature import (
    CurvatureConfig, DegenerateLossError, SingularPointError,
    curvature_loss, eikonal_loss, export_sdf_grid, gaussian_curvature,
    load_sdf_grid, mean_curvature, sample_surface, sdf_to_density,
)
from fieldreg.fields import PositionalEncoding, SdfConfig, SdfFieldModel
from oracles import fd_gradient, fd_hessian


def sphere_sdf(radius, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, dtype=np.float64)

    def f(x):
        d = x - c
        return ops.sqrt((d * d).sum(axis=-1)) - radius

    return f


def plane_sdf(x):
    return x[..., 0]


def cylinder_sdf(radius):
    def f(x):
        return ops.sqrt(x[..., 0] ** 2 + x[..., 1] ** 2) - radius

    return f


def fd_mean_curvature(f, x, h=1e-4):
    """- divergence of grad f / |grad f| by central differences."""
    def unit_grad(y):
        g = fd_gradient(lambda z: float(f(z)), y, h=1e-5)
        return g / np.linalg.norm(g)

    div = 0.0
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        div += (unit_grad(x + e)[k] - unit_grad(x - e)[k]) / (2 * h)
    return -div


def fd_gaussian_curvature(f, x, h=1e-3):
    g = fd_gradient(lambda z: float(f(z)), x, h=1e-5)
    H = fd_hessian(lambda z: float(f(z)), x, h=h)
    adj = np.linalg.det(H) * np.linalg.pinv(H) if np.linalg.det(H) != 0 else _adj3(H)
    return float(g @ _adj3(H) @ g / np.linalg.norm(g) ** 4)


def _adj3(H):
    return np.array([[np.linalg.det(np.delete(np.delete(H, i, 0), j, 1)) * (-1) ** (i + j)
                      for i in range(3)] for j in range(3)])


# -- mean curvature --------------------------------------------------------------

def test_mean_curvature_plane_zero():
    assert mean_curvature(plane_sdf, np.array([0.0, 2.0, -1.0])) == pytest.approx(0.0, abs=1e-12)


def test_mean_curvature_sphere_magnitude():
    # divergence form gives the principal-curvature SUM: |k| = 2/R
    f = sphere_sdf(2.0)
    x = np.array([2.0, 0.0, 0.0])
    k = mean_curvature(f, x)
    assert abs(k) == pytest.approx(1.0, abs=1e-10)
    want = fd_mean_curvature(f, x)
    assert k == pytest.approx(want, abs=1e-5)


def test_mean_curvature_mlp_matches_fd_divergence():
    cfg = SdfConfig(depth=3, width=24, skip_at=-1, encoding=PositionalEncoding(2, 0))
    model = SdfFieldModel(cfg, seed=3)
    rng = np.random.default_rng(0)
    for _ in range(3):
        x = rng.uniform(-0.8, 0.8, size=3)
        got = mean_curvature(model, x)
        want = fd_mean_curvature(lambda y: model.sdf(y), x)
        assert abs(got - want) < 1e-3


def test_mean_curvature_singular_point_raises():
    # grad of x0^2+... vanishes at the origin
    def f(x):
        return (x * x).sum(axis=-1)

    with pytest.raises(SingularPointError):
        mean_curvature(f, np.zeros(3))


# -- gaussian curvature --------------------------------------------------------------

def test_gaussian_curvature_plane_zero():
    assert gaussian_curvature(plane_sdf, np.array([0.0, 1.0, 1.0])) == pytest.approx(0.0, abs=1e-12)


def test_gaussian_curvature_sphere():
    for r in (0.5, 1.0, 2.0, 4.0):
        f = sphere_sdf(r)
        x = np.array([0.0, r, 0.0])
        assert gaussian_curvature(f, x) == pytest.approx(1.0 / r**2, rel=1e-9)
    # fd cross-check at R=2
    x = np.array([2.0, 0.0, 0.0])
    assert gaussian_curvature(sphere_sdf(2.0), x) == pytest.approx(
        fd_gaussian_curvature(sphere_sdf(2.0), x), abs=1e-3)


def test_gaussian_curvature_cylinder_zero():
    f = cylinder_sdf(1.5)
    x = np.array([1.5, 0.0, 0.7])
    assert gaussian_curvature(f, x) == pytest.approx(0.0, abs=1e-10)
    assert fd_gaussian_curvature(f, x) == pytest.approx(0.0, abs=1e-3)


def test_curvature_scale_invariance():
    f = sphere_sdf(2.0)
    x = np.array([0.0, 0.0, 2.0])
    for c in (3.0, 0.25):
        fc = lambda y, c=c: f(y) * c
        assert abs(mean_curvature(fc, x) - mean_curvature(f, x)) < 1e-9
        assert abs(gaussian_curvature(fc, x) - gaussian_curvature(f, x)) < 1e-9
    # gaussian also invariant under negation
    fneg = lambda y: f(y) * -1.0
    assert abs(gaussian_curvature(fneg, x) - gaussian_curvature(f, x)) < 1e-9


# -- eikonal -----------------------------------------------------------------------

def test_eikonal_exact_sdf_zero():
    assert eikonal_loss(plane_sdf, count=128, seed=0) == pytest.approx(0.0, abs=1e-12)


def test_eikonal_scaled_plane_one():
    f = lambda x: 2.0 * x[..., 0]
    assert eikonal_loss(f, count=64, seed=1) == pytest.approx(1.0, rel=1e-12)


def test_eikonal_count_validated():
    with pytest.raises(Exception):
        eikonal_loss(plane_sdf, count=0)


# -- curvature loss ----------------------------------------------------------------

def test_curvature_loss_plane_zero():
    pts = np.random.default_rng(0).uniform(-1, 1, size=(50, 3))
    pts[:, 0] = 0.0
    for kind in ("mean", "gaussian"):
        cfg = CurvatureConfig(kind=kind, kappa_curv=5.0)
        assert curvature_loss(plane_sdf, pts, cfg) == pytest.approx(0.0, abs=1e-12)


def test_curvature_loss_sphere_values():
    f = sphere_sdf(2.0)
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(64, 3))
    pts = 2.0 * pts / np.linalg.norm(pts, axis=-1, keepdims=True)
    cfg = CurvatureConfig(kind="gaussian", kappa_curv=1.0)
    assert curvature_loss(f, pts, cfg) == pytest.approx(0.25, rel=1e-9)
    cfg_clip = CurvatureConfig(kind="gaussian", kappa_curv=0.1)
    assert curvature_loss(f, pts, cfg_clip) == pytest.approx(0.1, rel=1e-12)


def test_curvature_loss_bounded_by_kappa():
    f = sphere_sdf(0.3)  # strong curvature
    pts = np.random.default_rng(2).normal(size=(32, 3))
    pts = 0.3 * pts / np.linalg.norm(pts, axis=-1, keepdims=True)
    for kappa in (0.5, 2.0, 10.0):
        cfg = CurvatureConfig(kind="mean", kappa_curv=kappa)
        assert curvature_loss(f, pts, cfg) <= kappa + 1e-12


def test_curvature_loss_all_singular_raises():
    def f(x):
        return (x * x).sum(axis=-1)  # grad 0 at origin

    cfg = CurvatureConfig(kind="mean")
    with pytest.raises(DegenerateLossError):
        curvature_loss(f, np.zeros((4, 3)), cfg)


def test_curvature_loss_parameter_differentiable():
    from fieldreg.autodiff import Tape, backward

    cfg = SdfConfig(depth=2, width=12, skip_at=-1, encoding=PositionalEncoding(2, 0))
    model = SdfFieldModel(cfg, seed=5)
    pts = sample_surface(model, 64, seed=0).points
    ccfg = CurvatureConfig(kind="gaussian", kappa_curv=5.0)
    tape = Tape()
    pv = tape.params_from(model.params)
    loss = curvature_loss(model, pts, ccfg, params=pv)
    grads = backward(tape, loss)
    assert all(np.all(np.isfinite(g)) for g in grads.values())
    assert any(np.any(g != 0) for g in grads.values())


# -- surface sampling ----------------------------------------------------------------

def test_sample_surface_analytic_sphere():
    pts = sample_surface(sphere_sdf(1.0), 200, seed=3)
    assert len(pts.points) == 200
    assert np.all(pts.residuals < 1e-10)
    assert not pts.converged_warning


def test_sample_surface_plane():
    pts = sample_surface(plane_sdf, 100, seed=4)
    assert np.all(np.abs(pts.points[:, 0]) < 1e-4)


def test_sample_surface_mlp_acceptance():
    cfg = SdfConfig(depth=3, width=32, skip_at=-1, encoding=PositionalEncoding(3, 0))
    model = SdfFieldModel(cfg, seed=7)
    pts = sample_surface(model, 200, seed=5)
    assert len(pts.points) > 0.9 * 200
    assert not pts.converged_warning


def test_sample_surface_deterministic():
    a = sample_surface(sphere_sdf(1.0), 64, seed=9)
    b = sample_surface(sphere_sdf(1.0), 64, seed=9)
    assert np.array_equal(a.points, b.points)


# -- sdf-to-density ----------------------------------------------------------------

def test_sdf_to_density_midpoint():
    assert sdf_to_density(0.0, alpha=8.0, beta=0.1) == pytest.approx(4.0)


def test_sdf_to_density_limits():
    assert sdf_to_density(50.0, alpha=8.0, beta=0.1) == pytest.approx(0.0, abs=1e-12)
    assert sdf_to_density(-50.0, alpha=8.0, beta=0.1) == pytest.approx(8.0, rel=1e-12)


def test_sdf_to_density_monotone():
    f = np.linspace(-2, 2, 201)
    sigma = sdf_to_density(f, alpha=5.0, beta=0.2)
    assert np.all(np.diff(sigma) < 0)


# -- grid export -------------------------------------------------------------------

def test_sdf_grid_roundtrip(tmp_path):
    f = sphere_sdf(1.0)
    path = tmp_path / "grid.bin"
    export_sdf_grid(f, path, box=((-1.2, -1.2, -1.2), (1.2, 1.2, 1.2)), dims=(8, 9, 10))
    vals, (lo, hi) = load_sdf_grid(path)
    assert vals.shape == (8, 9, 10)
    assert np.allclose(lo, -1.2) and np.allclose(hi, 1.2)
    # center voxel is inside the unit sphere
    xs = np.linspace(-1.2, 1.2, 8)
    ys = np.linspace(-1.2, 1.2, 9)
    zs = np.linspace(-1.2, 1.2, 10)
    want = np.sqrt(xs[3]**2 + ys[4]**2 + zs[5]**2) - 1.0
    assert vals[3, 4, 5] == pytest.approx(want, rel=1e-12)

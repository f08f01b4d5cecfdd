import numpy as np
import pytest

from fieldreg.autodiff import (
    Tape, Var, DualScalar, Dual2Scalar, NonFiniteError, UsageError,
    jvp, gradient, hessian, backward, ops,
)
from oracles import (
    central_diff_jvp, fd_gradient, fd_hessian, fd_param_gradient,
    make_mlp, mlp_numpy, rel_err, rel_err_vec,
)


# -- jvp ---------------------------------------------------------------------

def test_jvp_square():
    assert jvp(lambda d: d * d, [3.0], [1.0]) == pytest.approx(6.0)


def test_jvp_softplus_at_zero():
    # derivative of softplus is the sigmoid, and sigmoid(0) = 1/2
    assert jvp(lambda d: ops.softplus(d), [0.0], [1.0]) == pytest.approx(0.5)


def test_jvp_mlp_matches_central_difference():
    rng = np.random.default_rng(11)
    for case in range(10):
        params, f = make_mlp(100 + case, widths=(12, 12), out_dim=2)
        fnp = mlp_numpy(params, widths=(12, 12))
        x = rng.normal(size=3)
        u = rng.normal(size=3)
        got = jvp(f, x, u)
        want = central_diff_jvp(fnp, x, u, h=1e-4)
        assert rel_err(got, want) < 1e-6


def test_jvp_linearity():
    params, f = make_mlp(7, widths=(8,), out_dim=1)
    rng = np.random.default_rng(3)
    x = rng.normal(size=3)
    u, w = rng.normal(size=3), rng.normal(size=3)
    a, b = 1.7, -0.4
    lhs = jvp(f, x, a * u + b * w)
    rhs = a * jvp(f, x, u) + b * jvp(f, x, w)
    assert rel_err(lhs, rhs) < 1e-12


def test_jvp_nonfinite_direction_rejected():
    with pytest.raises(UsageError):
        jvp(lambda d: d, [1.0], [np.inf])


def test_nonfinite_intermediate_names_primitive():
    with np.errstate(over="ignore"), pytest.raises(NonFiniteError) as ei:
        t = Tape()
        v = t.param("p", 1000.0)
        v.exp()
    assert "exp" in str(ei.value)


# -- gradient ------------------------------------------------------------------

def test_gradient_norm_squared():
    g = gradient(lambda d: (d * d).sum(-1), [1.0, 2.0, 3.0])
    assert np.allclose(g, [2.0, 4.0, 6.0])


def test_gradient_of_constant_is_zero():
    g = gradient(lambda d: d * 0.0 + 4.25, [1.0, 2.0, 3.0])
    assert np.allclose(g, 0.0)


def test_gradient_mlp_matches_central_difference():
    params, f = make_mlp(42, widths=(16, 16), out_dim=1)
    fnp = mlp_numpy(params, widths=(16, 16))
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.normal(size=3)
        got = gradient(lambda d: f(d)[..., 0], x)
        want = fd_gradient(lambda y: fnp(y)[0], x, h=1e-4)
        assert rel_err(got, want) < 1e-5


# -- hessian -------------------------------------------------------------------

def test_hessian_dot():
    h = hessian(lambda d: (d * d).sum(-1), [0.3, -0.2, 0.9])
    assert np.allclose(h, 2.0 * np.eye(3))


def test_hessian_x1x2():
    h = hessian(lambda d: d[..., 0] * d[..., 1], [0.5, 0.7, 0.2])
    want = np.zeros((3, 3))
    want[0, 1] = want[1, 0] = 1.0
    assert np.allclose(h, want)


def test_hessian_affine_is_zero():
    h = hessian(lambda d: (d * np.array([1.0, -2.0, 0.5])).sum(-1) + 3.0, [1.0, 1.0, 1.0])
    assert np.allclose(h, 0.0)


def test_hessian_mlp_matches_central_difference():
    params, f = make_mlp(5, widths=(10, 10), out_dim=1)
    fnp = mlp_numpy(params, widths=(10, 10))
    rng = np.random.default_rng(1)
    for _ in range(4):
        x = rng.normal(size=3) * 0.5
        got = hessian(lambda d: f(d)[..., 0], x)
        want = fd_hessian(lambda y: fnp(y)[0], x, h=1e-3)
        assert np.max(np.abs(got - want)) < 1e-4
        assert np.max(np.abs(got - got.T)) <= 1e-10 * max(1.0, np.max(np.abs(got)))


# -- dual invariants -------------------------------------------------------------

def test_dual_product_rule_exact():
    a = DualScalar(2.0, 3.0)
    b = DualScalar(5.0, -1.0)
    p = a * b
    assert p.value == 10.0
    assert p.tangent == 2.0 * (-1.0) + 3.0 * 5.0


def test_lifted_constant_has_zero_tangent():
    a = DualScalar(2.0, 3.0)
    out = a + 7.0
    assert out.tangent == 3.0
    assert (a * 1.0).tangent == 3.0


def test_dual2_matches_two_dual_layers():
    # machine-precision agreement on a polynomial
    def poly(z):
        return z * z * z + 2.0 * z * z - z + 0.5

    x, u = 1.3, 0.7
    d2 = poly(Dual2Scalar(x, u, 0.0))
    nested = poly(DualScalar(DualScalar(x, u), DualScalar(u, 0.0)))
    assert d2.value == nested.value.value
    assert d2.first == nested.value.tangent
    assert d2.second == nested.tangent.tangent


def test_dual2_matches_nested_on_mlp():
    params, f = make_mlp(9, widths=(8, 8), out_dim=1)
    x = np.array([0.2, -0.4, 0.8])
    u = np.array([0.5, 1.0, -0.25])
    d2 = f(Dual2Scalar(x, u, 0.0))
    nested = f(DualScalar(DualScalar(x, u), DualScalar(u, 0.0)))
    assert np.allclose(d2.second, nested.tangent.tangent, rtol=1e-13, atol=1e-13)


# -- tape / backward --------------------------------------------------------------

def test_backward_product():
    t = Tape()
    a = t.param("t1", 3.0)
    b = t.param("t2", 5.0)
    g = backward(t, a * b)
    assert g["t1"] == pytest.approx(5.0)
    assert g["t2"] == pytest.approx(3.0)


def test_backward_sum_of_squares():
    t = Tape()
    theta = t.param("theta", np.array([1.0, 2.0, 3.0]))
    y = np.array([0.5, 0.0, -1.0])
    loss = ((theta - y) * (theta - y)).sum()
    g = backward(t, loss)
    assert np.allclose(g["theta"], 2 * (np.array([1.0, 2.0, 3.0]) - y))


def test_backward_requires_scalar_on_tape():
    t = Tape()
    a = t.param("a", np.array([1.0, 2.0]))
    with pytest.raises(UsageError):
        backward(t, a)  # not scalar, no seed
    other = Tape()
    b = other.param("b", 1.0)
    with pytest.raises(UsageError):
        backward(t, b * 2.0)


def test_backward_diamond_reuse():
    # (a + a) * a: adjoint accumulation must count both uses exactly once
    t = Tape()
    a = t.param("a", 3.0)
    g = backward(t, (a + a) * a)
    assert g["a"] == pytest.approx(4 * 3.0)


def test_grad_of_sum_is_sum_of_grads():
    def build(vals):
        t = Tape()
        p = t.param("p", vals)
        s1 = (p * p).sum()
        s2 = (p * 3.0).sum()
        return t, s1, s2

    vals = np.array([1.0, -2.0, 0.5])
    t, s1, s2 = build(vals)
    g_sum = backward(t, s1 + s2)["p"]
    t1, s1, _ = build(vals)
    g1 = backward(t1, s1)["p"]
    t2, _, s2 = build(vals)
    g2 = backward(t2, s2)["p"]
    assert np.allclose(g_sum, g1 + g2, rtol=1e-15)


def test_backward_through_embedded_jvp():
    # d/dtheta of || grad_x f_theta(x) ||^2 for a 1-hidden-unit softplus net
    def loss_given(params_arrs):
        w1 = params_arrs["w1"]
        b1 = params_arrs["b1"]
        w2 = params_arrs["w2"]

        def fnp(x):
            h = np.maximum(x @ w1 + b1, 0) + np.log1p(np.exp(-np.abs(x @ w1 + b1)))
            return float((h @ w2)[0])

        g = fd_gradient(fnp, x0, h=1e-5)
        return float(np.sum(g * g))

    rng = np.random.default_rng(21)
    arrs = {"w1": rng.normal(size=(3, 1)), "b1": rng.normal(size=1),
            "w2": rng.normal(size=(1, 1))}
    x0 = rng.normal(size=3)

    t = Tape()
    pv = t.params_from(arrs)

    def f(d):
        return ops.softplus(d @ pv["w1"] + pv["b1"]) @ pv["w2"]

    g = gradient(lambda d: f(d)[..., 0], x0)  # components are Vars
    loss = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
    got = backward(t, loss)
    want = fd_param_gradient(loss_given, arrs, h=1e-6)
    for name in arrs:
        assert rel_err_vec(got[name], want[name]) < 1e-5


def test_nesting_consistency_grad_of_grad_norm():
    # gradient-of-(||gradient||^2) w.r.t. parameters vs all-finite-difference
    rng = np.random.default_rng(2)
    arrs = {"w0": rng.normal(size=(3, 4)) * 0.7, "b0": rng.normal(size=4) * 0.1,
            "w_out": rng.normal(size=(4, 1)) * 0.7, "b_out": rng.normal(size=1) * 0.1}
    assert sum(a.size for a in arrs.values()) <= 32
    x0 = rng.normal(size=3)

    def loss_fd(p):
        def softplus(z):
            return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))

        def fnp(x):
            return float((softplus(x @ p["w0"] + p["b0"]) @ p["w_out"] + p["b_out"])[0])

        g = fd_gradient(fnp, x0, h=1e-5)
        return float(np.sum(g * g))

    t = Tape()
    pv = t.params_from(arrs)
    g = gradient(lambda d: (ops.softplus(d @ pv["w0"] + pv["b0"]) @ pv["w_out"] + pv["b_out"])[..., 0], x0)
    loss = g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
    got = backward(t, loss)
    want = fd_param_gradient(loss_fd, arrs, h=1e-6)
    for name in arrs:
        assert rel_err_vec(got[name], want[name]) < 1e-4


def test_determinism_bit_identical():
    def run():
        params, f = make_mlp(33, widths=(8, 8), out_dim=1)
        t = Tape()
        pv = t.params_from(params)
        g = gradient(lambda d: f(d, pv)[..., 0], np.array([0.1, 0.2, 0.3]))
        loss = g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
        return backward(t, loss)

    g1, g2 = run(), run()
    for k in g1:
        assert np.array_equal(g1[k], g2[k])


# -- primitive edge rules ----------------------------------------------------------

def test_min_max_tie_takes_first_argument():
    t = Tape()
    a = t.param("a", 2.0)
    b = t.param("b", 2.0)
    g = backward(t, a.maximum(b))
    assert g["a"] == 1.0 and g["b"] == 0.0
    t = Tape()
    a = t.param("a", 2.0)
    b = t.param("b", 2.0)
    g = backward(t, a.minimum(b))
    assert g["a"] == 1.0 and g["b"] == 0.0


def test_clip_derivative_one_sided():
    d = DualScalar(np.array([4.0, 25.0, 20.0]), np.array([1.0, 1.0, 1.0]))
    out = d.clip(0.0, 20.0)
    assert np.allclose(out.value, [4.0, 20.0, 20.0])
    assert np.allclose(out.tangent, [1.0, 0.0, 1.0])


def test_var_cumsum_backward():
    t = Tape()
    a = t.param("a", np.array([1.0, 2.0, 3.0]))
    out = (a.cumsum(-1) * np.array([1.0, 10.0, 100.0])).sum()
    g = backward(t, out)
    assert np.allclose(g["a"], [111.0, 110.0, 100.0])


def test_var_where_and_concat_backward():
    t = Tape()
    a = t.param("a", np.array([1.0, -2.0]))
    b = t.param("b", np.array([5.0, 6.0]))
    w = Var.where(np.array([True, False]), a, b)
    c = Var.concat([w, a * 2.0], axis=-1)
    g = backward(t, (c * np.array([1.0, 2.0, 3.0, 4.0])).sum())
    assert np.allclose(g["a"], [1.0 + 6.0, 8.0])
    assert np.allclose(g["b"], [0.0, 2.0])

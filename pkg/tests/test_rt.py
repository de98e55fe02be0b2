import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgroups import dp, geodesic as gd, manifold as mf, rt

from conftest import random_points

E1, E2 = np.eye(2)


def _tangent_at_end(M, x, tau, s):
    """Frame components at ``exp_x(s tau)`` of the geodesic's unit tangent there."""
    _, k = mf.frame_at(M, x)
    x1, v1, _ = gd.batch_flow(M, np.asarray(x)[None], (k @ tau * s)[None], length=np.array([s]))
    h1, _ = mf.frame_at(M, x1[0])
    return x1[0], h1 @ v1[0] / s


def test_unit_laws(sphere, halfplane, warped):
    for M in (sphere, halfplane, warped):
        x = random_points(M, 1, 0)[0]
        t = 0.2 * np.ones(M.dim) / np.sqrt(M.dim)
        assert np.array_equal(rt.rt_multiply(M, x, t, np.zeros(M.dim)), t)
        assert np.abs(rt.rt_multiply(M, x, np.zeros(M.dim), t) - t).max() < 1e-12


def test_flat_multiply(flat):
    assert np.allclose(rt.rt_multiply(flat, [0.3, 0.3], [1.0, 0.0], [0.0, 2.0]), [1.0, 2.0], atol=1e-14)


def test_collinear_halfplane(halfplane):
    x = np.array([0.0, 1.0])
    _, tau1 = _tangent_at_end(halfplane, x, E2, 0.5)
    assert np.allclose(tau1, E2, atol=1e-12)
    assert np.abs(rt.rt_multiply(halfplane, x, 0.5 * E2, 0.3 * tau1) - 0.8 * E2).max() < 1e-8


def test_act(flat, sphere):
    assert np.array_equal(rt.rt_act(sphere, [1.0, 0.2], [0.0, 0.0]), [1.0, 0.2])
    assert np.allclose(rt.rt_act(flat, [1.0, 1.0], [3.0, 4.0]), [4.0, 5.0])
    x, t, tp = np.array([1.1, 0.3]), np.array([0.2, -0.1]), np.array([0.15, 0.25])
    lhs = rt.rt_act(sphere, rt.rt_act(sphere, x, t), tp)
    rhs = rt.rt_act(sphere, x, rt.rt_multiply(sphere, x, t, tp))
    assert np.abs(lhs - rhs).max() < 1e-7


def test_lambda_examples(flat, sphere, halfplane):
    assert np.allclose(rt.lambda_transport(flat, [0.0, 0.0], [0.3, 0.1], [1.0, 2.0]), [1.0, 2.0], atol=1e-10)
    for M, x, tau in ((sphere, [1.0, 0.0], [0.6, 0.8]), (halfplane, [0.1, 1.0], [0.8, -0.6])):
        tau = np.asarray(tau)
        _, tau1 = _tangent_at_end(M, x, tau, 0.3)
        out = rt.lambda_transport(M, x, 0.3 * tau, tau1)
        assert np.abs(out - tau).max() < 1e-6
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-6)
    # transverse vector along the equator: lambda and pi disagree at finite s
    x = np.array([np.pi / 2, 0.0])
    lam = rt.lambda_transport(sphere, x, E2, E1)
    pi = dp.pi_transport(sphere, x, E2, E1)
    assert np.linalg.norm(lam - pi) > 1e-4
    small = np.linalg.norm(rt.lambda_transport(sphere, x, 0.5 * E2, E1) - dp.pi_transport(sphere, x, 0.5 * E2, E1))
    assert small < np.linalg.norm(lam - pi) / 4


def test_mu_examples(flat, sphere, halfplane):
    l = np.array([0.3, -0.7])
    assert np.abs(rt.mu_map(sphere, [1.0, 0.5], [0.0, 0.0], l) - l).max() < 1e-10
    assert np.abs(rt.mu_map(flat, [0.0, 0.0], [0.4, 0.2], l) - l).max() < 1e-10
    for M, x in ((sphere, [1.0, 0.5]), (halfplane, [0.2, 0.9])):
        tau = np.array([0.6, 0.8])
        gam = mf.gamma_at(M, x)
        for s in (0.05, 0.2, 0.3):
            out = rt.mu_map(M, x, s * tau, tau)
            assert np.abs(out - (tau + s * mf.apply2(gam, tau, tau))).max() < 1e-5


def test_gamma_from_group_matches_analytic(sphere, halfplane, warped):
    for M in (sphere, halfplane, warped):
        x = random_points(M, 1, 1)[0]
        assert np.abs(rt.gamma_from_group(M, x) - mf.gamma_at(M, x)).max() < 1e-5


def test_rho_examples(flat, sphere, halfplane):
    assert np.abs(rt.rho_at(flat, [0.0, 0.0])).max() < 1e-8
    for M, x in ((sphere, [1.0, 0.4]), (halfplane, [0.0, 1.0])):
        rho = rt.rho_at(M, x)
        R = mf.riemann_classical_at(M, x)
        lhs = E2 @ mf.apply3(rho, E2, E1, E1)
        rhs = (2 / 3) * (E2 @ mf.apply3(R, E1, E1, E2))
        assert lhs == pytest.approx(rhs, abs=5e-3)
        assert np.abs(rho - np.swapaxes(rho, 2, 3)).max() == 0.0


def test_curvature_from_group(flat, sphere, halfplane, warped):
    assert np.abs(rt.curvature_from_group(flat, [0.2, 0.2])).max() < 1e-8
    for M in (sphere, halfplane, warped):
        x = random_points(M, 1, 2)[0]
        Rg = rt.curvature_from_group(M, x)
        assert np.abs(Rg - mf.riemann_classical_at(M, x)).max() < 5e-3
        cyc = Rg + np.einsum("iabc->ibca", Rg) + np.einsum("iabc->icab", Rg)
        assert np.abs(cyc).max() < 5e-3


def test_associativity_and_inverse(sphere, halfplane):
    rng = np.random.default_rng(3)
    for M in (sphere, halfplane):
        x = random_points(M, 1, 3)[0]
        t, tp, tpp = (0.3 * v / np.linalg.norm(v) * rng.uniform(0.2, 1) for v in rng.normal(size=(3, 2)))
        # t' lives at x' = exp_x(t), t'' at x'' = exp_x'(t')
        x1 = rt.rt_act(M, x, t)
        lhs = rt.rt_multiply(M, x, rt.rt_multiply(M, x, t, tp), tpp)
        rhs = rt.rt_multiply(M, x, t, rt.rt_multiply(M, x1, tp, tpp))
        assert np.abs(lhs - rhs).max() < 1e-6
        inv = gd.log_map(M, x1, x)
        assert np.abs(rt.rt_multiply(M, x, t, inv)).max() < 1e-7


def test_lambda_composition_fails_only_when_curved(flat, sphere, halfplane):
    s = sp = 0.5
    tau = np.array([0.6, 0.8])
    theta = np.array([0.8, -0.6])
    for M, x, curved in ((flat, [0.0, 0.0], False), (sphere, [1.2, 0.0], True), (halfplane, [0.0, 1.0], True)):
        x = np.asarray(x)
        x1, tau1 = _tangent_at_end(M, x, tau, s)
        L = rt.batch_lambda(M, x[None], ((s + sp) * tau)[None])[0]
        L1 = rt.batch_lambda(M, x[None], (s * tau)[None])[0]
        L2 = rt.batch_lambda(M, x1[None], (sp * tau1)[None])[0]
        gap = np.linalg.norm((L - L1 @ L2) @ theta)
        if curved:
            assert gap > 1e-4
        else:
            assert gap < 1e-8


def test_gram_second_derivative(flat, halfplane):
    assert abs(rt.gram_second_derivative(flat, [0.1, 0.1], E1, E2)) < 1e-8
    x = np.array([0.0, 1.0])
    # tangent slot: the Gram form stays the identity
    _, tau1 = _tangent_at_end(halfplane, x, E2, 0.5)
    lam = rt.lambda_transport(halfplane, x, 0.5 * E2, tau1)
    assert lam @ lam == pytest.approx(1.0, abs=1e-6)
    # transverse slot: it does not
    v = rt.lambda_transport(halfplane, x, 0.5 * E2, E1)
    assert abs(v @ v - 1.0) > 1e-4


def test_gram_second_derivative_against_curvature(sphere, halfplane):
    # the second derivative of the transverse Gram entry equals -2/3 of the curvature contraction
    for M in (sphere, halfplane):
        x = random_points(M, 1, 5)[0]
        d2 = rt.gram_second_derivative(M, x, E1, E2)
        R = mf.riemann_classical_at(M, x)
        contraction = E2 @ mf.apply3(R, E1, E1, E2)
        assert d2 == pytest.approx(-(2 / 3) * contraction, rel=1e-2)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 0.3), st.floats(0, 2 * np.pi))
def test_tangent_norm_preserved(s, angle):
    M = mf.sphere()
    x = np.array([1.3, -0.2])
    tau = np.array([np.cos(angle), np.sin(angle)])
    _, tau1 = _tangent_at_end(M, x, tau, s)
    assert np.linalg.norm(rt.lambda_transport(M, x, s * tau, tau1)) == pytest.approx(1.0, abs=1e-6)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgroups import manifold as mf
from rgroups.errors import DomainError, MetricError
from rgroups.dsl import parse_metric

from conftest import random_points


def _numeric_metric_derivs(M, x, h=1e-5):
    n = M.dim
    dg = np.zeros((n, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        dg[:, :, k] = (mf.metric_at(M, x + e)[0] - mf.metric_at(M, x - e)[0]) / (2 * h)
    return dg


def test_metric_examples(flat, sphere, halfplane):
    g, dg, d2g = mf.metric_at(flat, [0.3, -2.0])
    assert np.array_equal(g, np.eye(2)) and not dg.any() and not d2g.any()
    assert np.allclose(mf.metric_at(sphere, [np.pi / 2, 0.4])[0], np.eye(2), atol=1e-15)
    assert np.allclose(mf.metric_at(halfplane, [0.0, 2.0])[0], np.diag([0.25, 0.25]), atol=1e-15)


def test_frame_examples(flat, sphere, halfplane):
    assert np.array_equal(mf.frame_at(flat, [1.0, 1.0])[0], np.eye(2))
    h, k = mf.frame_at(halfplane, [0.0, 2.0])
    assert np.allclose(h, np.diag([0.5, 0.5]), atol=1e-15)
    assert np.allclose(k, np.diag([2.0, 2.0]), atol=1e-15)
    h, _ = mf.frame_at(sphere, [np.pi / 4, 0.0])
    assert np.allclose(h, np.diag([1.0, np.sin(np.pi / 4)]), atol=1e-15)


def test_christoffel_examples(flat, sphere, halfplane):
    assert not mf.christoffel_at(flat, [0.1, 0.2]).any()
    G = mf.christoffel_at(sphere, [np.pi / 4, 0.0])
    assert G[0, 1, 1] == pytest.approx(-0.5, abs=1e-14)
    assert G[1, 0, 1] == pytest.approx(1.0, abs=1e-14) and G[1, 1, 0] == pytest.approx(1.0, abs=1e-14)
    G = mf.christoffel_at(halfplane, [0.0, 1.0])
    assert G[0, 0, 1] == pytest.approx(-1.0, abs=1e-14)
    assert G[1, 0, 0] == pytest.approx(1.0, abs=1e-14)
    assert G[1, 1, 1] == pytest.approx(-1.0, abs=1e-14)


def test_gamma_examples(flat, sphere, halfplane):
    assert not mf.gamma_at(flat, [0.5, 0.5]).any()
    gam = mf.gamma_at(halfplane, [0.0, 1.0])
    assert np.allclose(gam[:, 1, 1], 0.0, atol=1e-14)
    gam = mf.gamma_at(sphere, [np.pi / 4, 0.0])
    assert gam[0, 1, 1] == pytest.approx(-gam[1, 1, 0], abs=1e-14)


def test_anholonomy_examples(flat, sphere):
    assert not mf.anholonomy_at(flat, [0.0, 0.0]).any()
    C = mf.anholonomy_at(sphere, [np.pi / 4, 0.3])
    gam = mf.gamma_at(sphere, [np.pi / 4, 0.3])
    assert np.allclose(np.einsum("iaa->ia", C), 0.0)
    assert np.allclose(C, gam - np.swapaxes(gam, 1, 2), atol=1e-12)


def test_riemann_examples(flat, sphere, halfplane):
    assert not mf.riemann_classical_at(flat, [0.0, 0.0]).any()
    e1, e2 = np.eye(2)
    for x in ([0.7, 0.2], [2.0, -1.0]):
        R = mf.riemann_classical_at(sphere, x)
        assert abs(e2 @ mf.apply3(R, e1, e1, e2)) == pytest.approx(1.0, abs=1e-12)
        assert mf.sectional_curvature(R, e1, e2) == pytest.approx(1.0, abs=1e-12)
    R = mf.riemann_classical_at(halfplane, [0.3, 0.8])
    assert mf.sectional_curvature(R, e1, e2) == pytest.approx(-1.0, abs=1e-12)


def test_constant_sectional_curvature_across_points(sphere, halfplane):
    for M, K in ((sphere, 1.0), (halfplane, -1.0)):
        x = random_points(M, 60, 1)
        R = mf.batch_riemann_frame(M, x)
        k = mf.sectional_curvature(R, np.eye(2)[0], np.eye(2)[1])
        assert np.ptp(k) < 1e-6 and np.allclose(k, K, atol=1e-9)


def test_analytic_invariants_generic(warped):
    x = random_points(warped, 40, 2)
    g, dg, _ = mf.batch_metric(warped, x)
    h, k = mf.batch_frame(warped, x)
    assert np.max(np.abs(np.swapaxes(h, 1, 2) @ h - g)) < 1e-12
    assert np.allclose(h @ k, np.eye(3), atol=1e-13)
    G = mf.batch_christoffel(warped, x)
    assert np.max(np.abs(G - np.swapaxes(G, 2, 3))) < 1e-14
    # metric compatibility: d_k g_ij = g_mj G^m_ik + g_im G^m_jk
    lhs = dg
    rhs = np.einsum("bmj,bmik->bijk", g, G) + np.einsum("bim,bmjk->bijk", g, G)
    assert np.max(np.abs(lhs - rhs)) < 1e-10
    # frame connection is antisymmetric under the flat frame metric
    gam = mf.batch_gamma(warped, x)
    assert np.max(np.abs(gam + np.swapaxes(gam, 1, 3))) < 1e-9
    C = mf.batch_anholonomy(warped, x)
    assert np.max(np.abs(C - (gam - np.swapaxes(gam, 2, 3)))) < 1e-9
    R = mf.batch_riemann_frame(warped, x)
    assert np.max(np.abs(R + np.swapaxes(R, 3, 4))) == 0.0
    cyc = R + np.einsum("ziabc->zibca", R) + np.einsum("ziabc->zicab", R)
    assert np.max(np.abs(cyc)) < 1e-9
    # lowered curvature is antisymmetric in its first pair as well
    assert np.max(np.abs(R + np.swapaxes(R, 1, 2))) < 1e-9


def test_metric_derivatives_match_differences(warped):
    for x in random_points(warped, 5, 3):
        dg = mf.metric_at(warped, x)[1]
        assert np.max(np.abs(dg - _numeric_metric_derivs(warped, x))) < 1e-8


def test_errors(sphere, halfplane):
    with pytest.raises(DomainError):
        mf.metric_at(halfplane, [0.0, -1.0])
    with pytest.raises(DomainError):
        mf.frame_at(sphere, [0.01, 0.0])
    with pytest.raises(ValueError):
        mf.resolve("torus")
    M = mf.from_spec(parse_metric("dim 1; coords u; domain u (-2, 2); g[0][0] = u;"))
    with pytest.raises(MetricError):
        mf.frame_at(M, [-1.0])


def test_resolve_names():
    assert mf.resolve("euclidean4").dim == 4
    assert mf.resolve("sphere").name == "sphere"


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 2.9), st.floats(-3.0, 3.0))
def test_sphere_frame_is_orthonormal(theta, phi):
    M = mf.sphere()
    g = mf.metric_at(M, [theta, phi])[0]
    h, k = mf.frame_at(M, [theta, phi])
    assert np.allclose(k.T @ g @ k, np.eye(2), atol=1e-12)
    assert np.allclose(h.T @ h, g, rtol=1e-12, atol=1e-15)

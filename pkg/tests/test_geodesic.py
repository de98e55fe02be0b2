import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgroups import geodesic as gd, manifold as mf
from rgroups.errors import DomainError, SolverError

from conftest import random_points


def test_ivp_examples(flat, sphere, halfplane):
    p = gd.geodesic_ivp(flat, [0.0, 0.0], [1.0, 0.0], 2.0)
    assert np.allclose(p.points[-1], [2.0, 0.0], atol=1e-14) and np.allclose(p.velocities[-1], [1.0, 0.0])
    p = gd.geodesic_ivp(halfplane, [0.0, 1.0], [0.0, 1.0], 1.0)
    assert np.abs(p.points[-1] - [0.0, np.e]).max() < 1e-8
    p = gd.geodesic_ivp(sphere, [np.pi / 2, 0.0], [0.0, 1.0], np.pi / 2)
    assert np.abs(p.points[-1] - [np.pi / 2, np.pi / 2]).max() < 1e-8
    assert p.s[0] == 0.0 and p.s[-1] == pytest.approx(np.pi / 2)


def test_ivp_follows_closed_form_halfplane(halfplane):
    # vertical geodesics are y = exp(s)
    p = gd.geodesic_ivp(halfplane, [0.3, 1.0], [0.0, 1.0], 1.5)
    assert np.abs(p.points[:, 1] - np.exp(p.s)).max() < 1e-8
    assert np.allclose(p.points[:, 0], 0.3)


def test_exp_examples(flat, sphere, halfplane):
    for M, x in ((flat, [0.2, 0.1]), (sphere, [1.0, 0.5]), (halfplane, [0.0, 2.0])):
        assert np.array_equal(gd.exp_map(M, x, [0.0, 0.0]), x)
    assert np.abs(gd.exp_map(halfplane, [0.0, 1.0], [0.0, 1.0]) - [0.0, np.e]).max() < 1e-8
    assert np.allclose(gd.exp_map(flat, [1.0, 1.0], [3.0, 4.0]), [4.0, 5.0], atol=1e-14)


def test_log_examples(sphere, halfplane):
    x = np.array([0.4, 1.3])
    assert not gd.log_map(halfplane, x, x).any()
    t = gd.log_map(halfplane, [0.0, 1.0], [1.0, 1.0])
    assert np.linalg.norm(t) == pytest.approx(np.arccosh(1.5), abs=1e-6)
    t = gd.log_map(sphere, [np.pi / 2, 0.0], [np.pi / 2, np.pi / 3])
    assert np.linalg.norm(t) == pytest.approx(np.pi / 3, abs=1e-6)


def test_halfplane_distance_formula(halfplane):
    rng = np.random.default_rng(11)
    for _ in range(5):
        a = np.array([rng.uniform(-1, 1), rng.uniform(0.5, 2)])
        b = a + rng.uniform(-0.4, 0.4, 2)
        d = np.arccosh(1 + np.sum((a - b) ** 2) / (2 * a[1] * b[1]))
        assert np.linalg.norm(gd.log_map(halfplane, a, b)) == pytest.approx(d, abs=1e-8)


def test_sphere_distance_formula(sphere):
    def unit(p):
        return np.array([np.sin(p[0]) * np.cos(p[1]), np.sin(p[0]) * np.sin(p[1]), np.cos(p[0])])

    rng = np.random.default_rng(12)
    for _ in range(5):
        a = np.array([rng.uniform(0.8, 2.3), rng.uniform(-2, 2)])
        b = a + rng.uniform(-0.5, 0.5, 2)
        d = np.arccos(np.clip(unit(a) @ unit(b), -1, 1))
        assert np.linalg.norm(gd.log_map(sphere, a, b)) == pytest.approx(d, abs=1e-8)


def test_exp_log_inverse_all(flat, sphere, halfplane, warped):
    rng = np.random.default_rng(4)
    for M, cap in ((flat, 0.5), (sphere, 0.5), (halfplane, 0.5), (warped, 0.3)):
        x = random_points(M, 10, 3)
        t = rng.normal(size=x.shape)
        t *= rng.uniform(0.05, cap, (len(t), 1)) / np.linalg.norm(t, axis=1, keepdims=True)
        back = gd.batch_log(M, x, gd.batch_exp(M, x, t))
        assert np.abs(back - t).max() < 1e-7


def test_canonicity_examples(flat, sphere, halfplane):
    assert gd.canonicity_residual(flat, [0.1, 0.2], [0.6, 0.8], 0.3, 0.4) < 1e-12
    assert gd.canonicity_residual(halfplane, [0.0, 1.0], [0.0, 1.0], 0.5, 0.5) < 1e-7
    assert gd.canonicity_residual(sphere, [np.pi / 2, 0.0], [0.0, 1.0], 0.7, 0.2) < 1e-7
    with pytest.raises(ValueError):
        gd.canonicity_residual(flat, [0.0, 0.0], [1.0, 1.0], 0.1, 0.1)


def test_canonicity_random(sphere, halfplane, warped):
    rng = np.random.default_rng(8)
    for M in (sphere, halfplane, warped):
        x = random_points(M, 10, 9)
        tau = rng.normal(size=x.shape)
        tau /= np.linalg.norm(tau, axis=1, keepdims=True)
        r = gd.batch_canonicity(M, x, tau, rng.uniform(0.05, 0.3, 10), rng.uniform(0.05, 0.3, 10))
        assert r.max() < 1e-7


def test_cauchy_examples(flat, sphere, halfplane):
    assert gd.cauchy_residual(flat, [0.0, 0.0], [0.5, 0.2], [0.3, -0.1]) < 1e-8
    x, xp = np.array([0.0, 1.0]), np.array([0.3, 1.2])
    v = gd.geodesic_velocity_at(halfplane, x, xp)
    assert gd.cauchy_residual(halfplane, x, xp, v, eps=1e-3) < 1e-4
    x, xp = np.array([1.2, 0.1]), np.array([1.4, 0.4])
    v = gd.geodesic_velocity_at(sphere, x, xp)
    r1 = gd.cauchy_residual(sphere, x, xp, v, eps=1e-2)
    r2 = gd.cauchy_residual(sphere, x, xp, v, eps=5e-3)
    assert r1 / r2 == pytest.approx(4.0, rel=0.2)


def test_speed_conservation(sphere, halfplane, warped):
    rng = np.random.default_rng(2)
    for M, s in ((sphere, 2.0), (halfplane, 2.0), (warped, 0.5)):
        x = random_points(M, 1, 4)[0]
        _, k = mf.frame_at(M, x)
        v = k @ (rng.normal(size=M.dim) / np.sqrt(M.dim))
        p = gd.geodesic_ivp(M, x, v / np.linalg.norm(mf.frame_at(M, x)[0] @ v), s)
        g = mf.batch_metric(M, p.points, order=0)[0]
        speed = np.einsum("bi,bij,bj->b", p.velocities, g, p.velocities)
        assert np.ptp(speed) / speed[0] < 1e-9


def test_attachment(sphere, halfplane):
    # n-fold continuation with the transported tangent equals one exp of n times the parameter
    for M, x, tau in ((sphere, [1.5, -3.0], [0.1, 0.995]), (halfplane, [0.2, 1.0], [0.6, -0.8])):
        tau = np.asarray(tau) / np.linalg.norm(tau)
        x = np.asarray(x)
        for n in (2, 5):
            xi, vi = x, mf.frame_at(M, x)[1] @ tau * 0.5
            for _ in range(n):
                t_i = mf.frame_at(M, xi)[0] @ vi
                p = gd.geodesic_ivp(M, xi, vi, 1.0)
                xi, vi = p.points[-1], p.velocities[-1]
                assert np.linalg.norm(t_i) == pytest.approx(0.5, abs=1e-9)
            assert np.abs(xi - gd.exp_map(M, x, n * 0.5 * tau)).max() < n * 1e-7


def test_errors(sphere, halfplane):
    with pytest.raises(DomainError):
        gd.exp_map(sphere, [1.5, 3.0], [0.0, 1.0])
    with pytest.raises(SolverError) as info:
        gd.log_map(sphere, [1.0, 0.0], [2.1, 3.1])
    assert info.value.reason == "out-of-injectivity-radius"
    with pytest.raises(ValueError):
        gd.ExpLogConfig(fd_eps=0.1)
    with pytest.raises(ValueError):
        gd.ExpLogConfig(steps_per_unit=0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(0.5, 2), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_exp_log_roundtrip_halfplane(a, b, t1, t2):
    M = mf.halfplane()
    t = np.array([t1, t2])
    if not t.any():
        return
    assert np.abs(gd.log_map(M, [a, b], gd.exp_map(M, [a, b], t)) - t).max() < 1e-7

"""Translations with frame rotations: the group of parallel transports.

Elements at ``x`` are pairs ``(t, r)`` of a frame vector and a rotation of
frame components. The rotation part of a translation is the pi-transport
``pi_x(t)``, which carries frame components at ``exp_x(t)`` back to ``x``
by parallel transport along the geodesic. The group law is

    (t, r) x (t', r') = (phi_x(t, t'), r pi_x(t) r' pi_{x'}(t') pi_x(phi_x(t, t'))^-1).

Rotation operators act on frame components; ``sigma.R[i, j, a, b]`` is the
matrix entry ``(i, j)`` of the rotation block for the pair ``(e_a, e_b)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import fd
from .geodesic import DEFAULT, ExpLogConfig, GeodesicPath, _finite_or_raise, batch_exp, batch_log, batch_transport
from .manifold import Manifold, batch_frame
from .rt import batch_gamma_group


@dataclass(frozen=True)
class DPElement:
    t: np.ndarray
    r: np.ndarray


@dataclass(frozen=True)
class SigmaOperator:
    T: np.ndarray  # (n, n, n): translation block, T[i, a, b]
    R: np.ndarray  # (n, n, n, n): rotation block, R[i, j, a, b]


@dataclass(frozen=True)
class Holonomy:
    rotation: np.ndarray
    angle: float  # signed in two dimensions, largest principal angle otherwise
    closure_defect: float
    vertices: np.ndarray


def random_rotation(rng: np.random.Generator, n: int) -> np.ndarray:
    """Seeded rotation composed of plane rotations in every coordinate plane."""
    r = np.eye(n)
    for i, j in combinations(range(n), 2):
        a = rng.uniform(-np.pi, np.pi)
        g = np.eye(n)
        g[i, i] = g[j, j] = np.cos(a)
        g[i, j], g[j, i] = -np.sin(a), np.sin(a)
        r = g @ r
    return r


def check_rotation(r, tol: float = 1e-12) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("rotation must be a square matrix")
    if np.abs(r.T @ r - np.eye(len(r))).max() > tol or np.linalg.det(r) < 0:
        raise ValueError("matrix is not a proper rotation")
    return r


def rotation_angle(H: np.ndarray) -> float:
    if H.shape == (2, 2):
        return float(np.arctan2(H[1, 0], H[0, 0]))
    return float(np.abs(np.angle(np.linalg.eigvals(H))).max())


# ---------------------------------------------------------------- batched kernels

def _inv(P: np.ndarray) -> np.ndarray:
    out = np.full_like(P, np.nan)
    ok = np.all(np.isfinite(P), axis=(1, 2))
    if np.any(ok):
        out[ok] = np.linalg.inv(P[ok])
    return out


def batch_law(M: Manifold, x, t, tp, cfg: ExpLogConfig = DEFAULT):
    """``t'' = phi_x(t, t')`` and the three transports of the group law.

    Returns ``(t'', pi_t, pi_tp, pi_t2_inv)`` so that the rotation part of
    ``(t, r) x (t', r')`` is ``r @ pi_t @ r' @ pi_tp @ pi_t2_inv``.
    """
    x1, P1 = batch_transport(M, x, t, cfg)
    y, P2 = batch_transport(M, x1, tp, cfg)
    t2 = batch_log(M, x, y, cfg)
    _, P3 = batch_transport(M, x, t2, cfg)
    return t2, _inv(P1), _inv(P2), P3


def batch_sigma(M: Manifold, x, cfg: ExpLogConfig = DEFAULT):
    """Antisymmetrized mixed second derivatives of the pure-translation group law."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B, n = x.shape

    def F(rows):
        t2, A, Bm, C = batch_law(M, np.repeat(x, len(rows) // B, axis=0), rows[:, :n], rows[:, n:], cfg)
        return np.concatenate([t2, (A @ Bm @ C).reshape(len(rows), n * n)], axis=1)

    eye = np.eye(2 * n)
    pairs = [(a, b) for a in range(n) for b in range(n)]
    req = [(np.broadcast_to(np.stack([eye[a], eye[n + b]]), (B, 2, 2 * n)), (1, 1)) for a, b in pairs]
    vals = fd.derivatives(F, np.zeros((B, 2 * n)), req, cfg.fd_eps, cfg.richardson)
    D = np.stack(vals, axis=1).reshape(B, n, n, n + n * n)  # [b, a, c, out]
    D = D - np.swapaxes(D, 1, 2)
    T = np.moveaxis(D[..., :n], 3, 1)  # [b, i, a, c]
    R = np.moveaxis(D[..., n:].reshape(B, n, n, n, n), (3, 4), (1, 2))  # [b, i, j, a, c]
    return T, R


def batch_consistency(M: Manifold, x, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """Per row: max over basis directions of |d/ds pi_x(s tau) - d/ds lambda_x(s tau)| at ``s = 0``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B, n = x.shape

    def F(rows):
        P = len(rows) // B
        _, Pm = batch_transport(M, np.repeat(x, P, axis=0), rows, cfg)
        return _inv(Pm).reshape(len(rows), n * n)

    eye = np.eye(n)
    req = [(np.broadcast_to(eye[a][None], (B, 1, n)), (1,)) for a in range(n)]
    dpi = np.stack(fd.derivatives(F, np.zeros((B, n)), req, cfg.fd_eps, cfg.richardson), axis=1).reshape(B, n, n, n)
    gam = batch_gamma_group(M, x, cfg)  # [b, i, a, c]: d_s lambda(s e_a) e_c
    dlam = np.moveaxis(gam, 2, 1)  # [b, a, i, c]
    return np.abs(dpi - dlam).max(axis=(1, 2, 3))


def batch_frame_connection(M: Manifold, x, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """Connection from the moving-frame limit: ``[b, i, a, c]`` compares with ``gamma<e_a, e_c>^i``.

    For ``r = 1`` the moved frame has components ``h_{x'} e'_{x'} = pi_x(t)^-1``,
    so ``(e_{x'} - e'_{x'}) / e`` in frame components is ``(1 - pi_x(e l)^-1) / e``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B, n = x.shape

    def F(rows):
        P = len(rows) // B
        xs = np.repeat(x, P, axis=0)
        x1 = batch_exp(M, xs, rows, cfg)
        E = batch_act_frame(M, xs, rows, np.broadcast_to(np.eye(n), (len(rows), n, n)), cfg)
        h1, k1 = batch_frame(M, x1)
        return (np.eye(n)[None] - h1 @ E).reshape(len(rows), n * n)

    eye = np.eye(n)
    req = [(np.broadcast_to(eye[a][None], (B, 1, n)), (1,)) for a in range(n)]
    d = np.stack(fd.derivatives(F, np.zeros((B, n)), req, cfg.fd_eps, cfg.richardson), axis=1).reshape(B, n, n, n)
    return np.moveaxis(d, 1, 2)  # [b, i, a, c]


def batch_act_frame(M: Manifold, x, t, r, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """Chart matrices (columns are frame vectors) of ``e'_{x'} = pi_x(t)^-1 r^-1 e_{x'}``."""
    x1, P = batch_transport(M, x, t, cfg)
    _, k1 = batch_frame(M, x1)
    rp = np.einsum("bij,bjk->bik", np.asarray(r, dtype=float), _inv(P))
    return k1 @ _inv(rp)


# ---------------------------------------------------------------- public single-point API

def pi_transport(M: Manifold, x, t, theta, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """``pi_x(t)<theta'>``: parallel transport of frame components from ``exp_x(t)`` back to ``x``."""
    x = M.check_point(x)
    _, P = batch_transport(M, x[None], np.asarray(t, dtype=float)[None], cfg)
    P = _finite_or_raise(P[0], "pi_transport")
    return np.linalg.solve(P, np.asarray(theta, dtype=float))


def dp_multiply(M: Manifold, x, a: DPElement, b: DPElement, cfg: ExpLogConfig = DEFAULT) -> DPElement:
    x = M.check_point(x)
    t2, A, Bm, C = batch_law(M, x[None], np.asarray(a.t, dtype=float)[None], np.asarray(b.t, dtype=float)[None], cfg)
    t2 = _finite_or_raise(t2[0], "dp_multiply", "out-of-injectivity-radius")
    r2 = np.asarray(a.r) @ A[0] @ np.asarray(b.r) @ Bm[0] @ C[0]
    return DPElement(t2, _finite_or_raise(r2, "dp_multiply"))


def dp_act_tangent(M: Manifold, x, g: DPElement, tau, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """``r pi_x(t) tau'`` for ``tau'`` in frame components at ``exp_x(t)``."""
    return np.asarray(g.r, dtype=float) @ pi_transport(M, x, g.t, tau, cfg)


def dp_act_frame(M: Manifold, x, g: DPElement, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """Moved orthonormal frame at ``exp_x(t)`` as a chart matrix (columns are the frame vectors)."""
    x = M.check_point(x)
    E = batch_act_frame(M, x[None], np.asarray(g.t, dtype=float)[None], np.asarray(g.r, dtype=float)[None], cfg)
    return _finite_or_raise(E[0], "dp_act_frame")


def frame_connection(M: Manifold, x, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    x = M.check_point(x)
    return _finite_or_raise(batch_frame_connection(M, x[None], cfg)[0], "frame_connection")


def sigma_at(M: Manifold, x, cfg: ExpLogConfig = DEFAULT) -> SigmaOperator:
    x = M.check_point(x)
    T, R = batch_sigma(M, x[None], cfg)
    return SigmaOperator(_finite_or_raise(T[0], "sigma_at"), _finite_or_raise(R[0], "sigma_at"))


def consistency_residual(M: Manifold, x, cfg: ExpLogConfig = DEFAULT) -> float:
    x = M.check_point(x)
    return float(_finite_or_raise(batch_consistency(M, x[None], cfg), "consistency_residual")[0])


def _transport1(M, x, t, cfg):
    x1, P = batch_transport(M, np.asarray(x, dtype=float)[None], np.asarray(t, dtype=float)[None], cfg)
    return _finite_or_raise(x1[0], "holonomy"), _finite_or_raise(P[0], "holonomy")


def holonomy_loop(M: Manifold, x, a, b, scale: float, cfg: ExpLogConfig = DEFAULT) -> Holonomy:
    """Geodesic quadrilateral with legs ``s a``, ``s b``, ``-s a`` turned by pi-transport, closed by a log leg."""
    x0 = M.check_point(x)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x1, P01 = _transport1(M, x0, scale * a, cfg)
    x2, P12 = _transport1(M, x1, scale * (P01 @ b), cfg)
    x3, P23 = _transport1(M, x2, -scale * (P12 @ P01 @ a), cfg)
    t4 = batch_log(M, x3[None], x0[None], cfg)[0]
    t4 = _finite_or_raise(t4, "holonomy", "out-of-injectivity-radius")
    _, P30 = _transport1(M, x3, t4, cfg)
    H = P30 @ P23 @ P12 @ P01
    defect = float(np.linalg.norm(t4 + scale * (P23 @ P12 @ P01 @ b)))
    return Holonomy(H, rotation_angle(H), defect, np.stack([x0, x1, x2, x3]))


def holonomy_polygon(M: Manifold, vertices, cfg: ExpLogConfig = DEFAULT) -> Holonomy:
    """Transport around the closed geodesic polygon through ``vertices``."""
    V = np.array([M.check_point(v) for v in vertices])
    nxt = np.roll(V, -1, axis=0)
    t = batch_log(M, V, nxt, cfg)
    t = _finite_or_raise(t, "holonomy", "out-of-injectivity-radius")
    ends, P = batch_transport(M, V, t, cfg)
    _finite_or_raise(P, "holonomy")
    H = np.eye(M.dim)
    for Pk in P:
        H = Pk @ H
    defect = float(np.abs(ends - nxt).max())
    return Holonomy(H, rotation_angle(H), defect, V)


def first_integral_residual(M: Manifold, path: GeodesicPath, theta0, cfg: ExpLogConfig = DEFAULT, stride: int = 1) -> float:
    """Max deviation of ``pi_x(log_x(x'))<theta_{x'}>`` from ``theta0`` along ``path``.

    ``theta_{x'}`` is carried by the transport ODE along the path; the
    pi-transport back uses an independent log-map reconstruction of ``t``.
    """
    x0 = M.check_point(path.x0)
    theta0 = np.asarray(theta0, dtype=float)
    pts = path.points[1::stride]
    s = path.s[1::stride]
    if len(pts) == 0:
        return 0.0
    h0, _ = batch_frame(M, x0[None])
    t_path = s[:, None] * (h0[0] @ path.v0)[None]
    xs = np.repeat(x0[None], len(pts), axis=0)
    _, Pfwd = batch_transport(M, xs, t_path, cfg)
    theta = Pfwd @ theta0
    t_log = batch_log(M, xs, pts, cfg)
    _, Pback = batch_transport(M, xs, t_log, cfg)
    u = np.linalg.solve(_finite_or_raise(Pback, "first_integral_residual"), theta[..., None])[..., 0]
    return float(np.abs(_finite_or_raise(u, "first_integral_residual") - theta0).max())

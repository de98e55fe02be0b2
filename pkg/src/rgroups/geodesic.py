"""Geodesic initial and boundary value problems.

``exp_map``/``log_map`` are the canonical deformation maps: a frame vector
``t = s tau`` (``|tau| = 1``) is sent to the endpoint of the affinely
parametrized geodesic leaving ``x`` with unit frame velocity ``tau`` after
length ``s``, and ``log_map`` inverts this by shooting.

All ``batch_*`` kernels operate row-wise on arrays of shape ``(B, n)`` and
return NaN rows instead of raising, so that callers can stack many finite
difference stencils and many sample points into a single integration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SolverError
from . import kernels
from . import fd
from .manifold import Manifold, batch_christoffel, batch_frame


@dataclass(frozen=True)
class ExpLogConfig:
    steps_per_unit: int = 256
    max_iter: int = 40
    bvp_tol: float = 1e-12
    fd_eps: float = 1e-2
    richardson: int = 1
    jac_step: float = 1e-7

    def __post_init__(self):
        if self.steps_per_unit < 1 or self.max_iter < 1 or self.bvp_tol <= 0 or self.jac_step <= 0:
            raise ValueError("ExpLogConfig fields must be positive")
        if not 1e-6 <= self.fd_eps <= 1e-2:
            raise ValueError("fd_eps must lie in [1e-6, 1e-2]")
        if self.richardson < 0:
            raise ValueError("richardson must be non-negative")

    def steps(self, length):
        """RK4 step count for frame length(s) ``length``; constant up to unit length
        so that finite-difference stencils around short vectors see one smooth map."""
        units = np.maximum(1, np.ceil(np.nan_to_num(np.asarray(length, dtype=float), nan=1.0) - 1e-12))
        return (self.steps_per_unit * units).astype(np.int64)


DEFAULT = ExpLogConfig()


@dataclass(frozen=True)
class GeodesicPath:
    x0: np.ndarray
    v0: np.ndarray  # initial chart velocity
    s: np.ndarray  # affine parameter grid
    points: np.ndarray  # (N+1, n)
    velocities: np.ndarray  # (N+1, n), d x / d s


def _as_rows(*arrays):
    out = [np.atleast_2d(np.asarray(a, dtype=float)) for a in arrays]
    b = max(a.shape[0] for a in out)
    return [np.broadcast_to(a, (b, a.shape[1])).copy() for a in out]


def batch_flow(M: Manifold, x, v, cfg: ExpLogConfig = DEFAULT, vectors=None, length=None, record=False):
    """Integrate ``x'' + Gamma(x', x') = 0`` over ``s in [0, 1]`` with classical RK4.

    ``vectors`` (``(B, n, m)`` chart components) are parallel transported
    alongside (``W' = -Gamma(x', W)``). Rows that leave the domain or blow up
    become NaN. Returns ``(x1, v1, W1)`` or, with ``record``, whole trajectories.
    """
    x, v = _as_rows(x, v)
    W = None if vectors is None else np.array(vectors, dtype=float)
    if length is None:
        h, _ = batch_frame(M, x)
        length = np.linalg.norm(np.einsum("bij,bj->bi", h, v), axis=1)
    steps = np.broadcast_to(cfg.steps(length), (x.shape[0],)).copy()
    if record:
        steps[:] = steps.max(initial=cfg.steps_per_unit)
    n_steps = int(steps.max(initial=cfg.steps_per_unit))

    if M.flat:
        xs = x + v
        xs[~M.in_domain(xs) | ~M.in_domain(x)] = np.nan
        if record:
            grid = np.linspace(0.0, 1.0, n_steps + 1)
            traj = x[None] + grid[:, None, None] * v[None]
            return traj, np.broadcast_to(v, traj.shape).copy(), None if W is None else np.broadcast_to(W, (n_steps + 1,) + W.shape).copy()
        return xs, v.copy(), None if W is None else W.copy()

    if M.program is None:
        raise ValueError(f"{M.name}: no metric program for the integrator")
    b, n = x.shape
    W0 = np.zeros((b, n, 0)) if W is None else np.ascontiguousarray(W)
    xs, vs, Ws, tx, tv, tW = kernels.rk4_flow(M.program.code, M.program.consts, np.ascontiguousarray(x), np.ascontiguousarray(v), W0,
                                              steps, M.lower, M.upper, record)
    if record:
        return tx, tv, None if W is None else tW
    return xs, vs, None if W is None else Ws


def batch_exp(M: Manifold, x, t, cfg: ExpLogConfig = DEFAULT, length=None) -> np.ndarray:
    """Rows of ``exp_x(t)`` for frame vectors ``t``."""
    x, t = _as_rows(x, t)
    _, k = batch_frame(M, x)
    v = np.einsum("bij,bj->bi", k, t)
    if length is None:
        length = np.linalg.norm(t, axis=1)
    return batch_flow(M, x, v, cfg, length=length)[0]


def batch_log(M: Manifold, x, y, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """Rows of ``log_x(y)`` by damped Newton shooting; NaN where shooting fails."""
    x, y = _as_rows(x, y)
    b, n = x.shape
    h, _ = batch_frame(M, x)
    t = np.einsum("bij,bj->bi", h, y - x)
    if M.flat:
        t[~M.in_domain(y)] = np.nan
        return t
    out = np.full((b, n), np.nan)
    active = np.flatnonzero(np.all(np.isfinite(t), axis=1) & M.in_domain(y))
    step = np.ones(b)
    direction = np.zeros((b, n))
    best_res = np.full(b, np.inf)
    best_t = t.copy()
    polished = np.zeros(b, dtype=bool)
    scale = np.maximum(1.0, np.abs(y).max(axis=1))
    delta = cfg.jac_step
    eye = np.eye(n)[None]

    for _ in range(cfg.max_iter):
        if active.size == 0:
            break
        xa, ta, ya = x[active], t[active], y[active]
        probes = np.concatenate([ta[:, None, :], ta[:, None, :] + delta * eye], axis=1)
        # Jacobian probes share the step count of exp at the current iterate
        length = np.repeat(np.linalg.norm(ta, axis=1), n + 1)
        ends = batch_exp(M, np.repeat(xa, n + 1, axis=0), probes.reshape(-1, n), cfg, length=length)
        ends = ends.reshape(len(active), n + 1, n)
        F = ends[:, 0]
        J = np.swapaxes(ends[:, 1:] - F[:, None, :], 1, 2) / delta
        res = np.linalg.norm(F - ya, axis=1)
        res[~np.all(np.isfinite(ends), axis=(1, 2))] = np.inf

        still = []
        for r, idx in enumerate(active):
            if not res[r] < best_res[idx]:
                if polished[idx]:
                    out[idx] = best_t[idx]  # roundoff floor reached
                    continue
                if not np.isfinite(best_res[idx]):
                    continue  # the initial guess itself is unusable
                step[idx] *= 0.5
                if step[idx] < 1e-8:
                    continue
                t[idx] = best_t[idx] + step[idx] * direction[idx]
                still.append(idx)
                continue
            best_res[idx], best_t[idx] = res[r], ta[r]
            if polished[idx]:
                out[idx] = ta[r]
                continue
            if res[r] < cfg.bvp_tol * scale[idx]:
                polished[idx] = True  # one more full step removes the remaining error
            try:
                d = np.linalg.solve(J[r], ya[r] - F[r])
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(d)):
                continue
            direction[idx] = d
            step[idx] = 1.0
            t[idx] = ta[r] + d
            still.append(idx)
        active = np.array(still, dtype=int)
    return out


def batch_transport(M: Manifold, x, t, cfg: ExpLogConfig = DEFAULT, length=None):
    """Endpoint ``x' = exp_x(t)`` and the frame-component parallel transport matrix ``P``.

    ``P`` maps frame components at ``x`` to frame components at ``x'`` along the
    geodesic; the pi-transport back to ``x`` is its inverse.
    """
    x, t = _as_rows(x, t)
    _, k = batch_frame(M, x)
    v = np.einsum("bij,bj->bi", k, t)
    if length is None:
        length = np.linalg.norm(t, axis=1)
    x1, _, W = batch_flow(M, x, v, cfg, vectors=k, length=length)
    h1, _ = batch_frame(M, x1)
    return x1, np.einsum("bij,bjk->bik", h1, W)


def batch_pi(M: Manifold, x, t, cfg: ExpLogConfig = DEFAULT, length=None) -> np.ndarray:
    """pi-transport matrices ``pi_x(t)``: frame components at ``exp_x(t)`` to frame components at ``x``."""
    _, P = batch_transport(M, x, t, cfg, length)
    ok = np.all(np.isfinite(P), axis=(1, 2))
    out = np.full_like(P, np.nan)
    if np.any(ok):
        out[ok] = np.linalg.inv(P[ok])
    return out


def batch_canonicity(M: Manifold, x, tau, s, sp, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """``|log_x(exp_{x'}(s' tau_{x'})) - (s + s') tau|`` per row, ``tau_{x'}`` the geodesic tangent at ``x' = exp_x(s tau)``."""
    x, tau = _as_rows(x, tau)
    B = x.shape[0]
    s = np.broadcast_to(np.asarray(s, dtype=float), (B,))
    sp = np.broadcast_to(np.asarray(sp, dtype=float), (B,))
    _, k = batch_frame(M, x)
    v = np.einsum("bij,bj->bi", k, s[:, None] * tau)
    x1, v1, _ = batch_flow(M, x, v, cfg, length=np.abs(s) * np.linalg.norm(tau, axis=1))
    h1, _ = batch_frame(M, x1)
    tau1 = np.einsum("bij,bj->bi", h1, v1) / np.where(s == 0, 1.0, s)[:, None]
    y = batch_exp(M, x1, sp[:, None] * tau1, cfg)
    t2 = batch_log(M, x, y, cfg)
    return np.linalg.norm(t2 - (s + sp)[:, None] * tau, axis=1)


def batch_cauchy(M: Manifold, x, xp, vp, cfg: ExpLogConfig = DEFAULT, eps: float | None = None, richardson: int = 0) -> np.ndarray:
    """Norm of ``d2H<v, v> - dH<Gamma_{x'}(v, v)>`` for ``H = log_x`` differentiated in ``x'``.

    Vanishes when ``v`` is the velocity at ``x'`` of the geodesic from ``x``,
    because ``log_x`` is then linear along the curve.
    """
    x, xp, vp = _as_rows(x, xp, vp)
    B, n = x.shape
    eps = cfg.fd_eps if eps is None else eps
    acc = np.einsum("bijk,bj,bk->bi", batch_christoffel(M, xp), vp, vp)

    def F(rows):
        return batch_log(M, np.repeat(x, len(rows) // B, axis=0), rows, cfg)

    req = [(vp[:, None, :], (2,)), (acc[:, None, :], (1,))]
    d2, d1 = fd.derivatives(F, xp, req, eps, richardson)
    return np.linalg.norm(d2 - d1, axis=1)


# ---------------------------------------------------------------- single-call API

def _finite_or_raise(arr: np.ndarray, what: str, reason: str = "domain-exit") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        if reason == "domain-exit":
            raise DomainError(f"{what}: geodesic left the chart domain")
        raise SolverError(f"{what}: shooting did not converge (point outside the injectivity region?)", reason)
    return arr


def geodesic_ivp(M: Manifold, x, v0, s: float, cfg: ExpLogConfig = DEFAULT) -> GeodesicPath:
    """Geodesic from ``x`` with chart velocity ``v0`` sampled on the RK4 grid up to parameter ``s``."""
    x = M.check_point(x)
    v0 = np.asarray(v0, dtype=float)
    if not np.all(np.isfinite(v0)):
        raise ValueError("initial velocity must be finite")
    h, _ = batch_frame(M, x[None])
    length = abs(s) * float(np.linalg.norm(h[0] @ v0))
    xs, vs, _ = batch_flow(M, x[None], s * v0[None], cfg, length=length, record=True)
    pts, vel = xs[:, 0], vs[:, 0]
    _finite_or_raise(pts, "geodesic_ivp")
    grid = np.linspace(0.0, s, len(pts))
    vel = vel / s if s != 0 else np.broadcast_to(v0, vel.shape).copy()
    return GeodesicPath(x.copy(), v0.copy(), grid, pts, vel)


def exp_map(M: Manifold, x, t, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """``x' = x + K_x(t)``: endpoint of the geodesic with initial frame vector ``t``."""
    x = M.check_point(x)
    t = np.asarray(t, dtype=float)
    if not np.any(t):
        return x.copy()
    return _finite_or_raise(batch_exp(M, x[None], t[None], cfg)[0], "exp_map")


def log_map(M: Manifold, x, y, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """``t = H_x(y - x)``: frame vector whose geodesic from ``x`` ends at ``y``."""
    x = M.check_point(x)
    y = M.check_point(y)
    if np.array_equal(x, y):
        return np.zeros_like(x)
    return _finite_or_raise(batch_log(M, x[None], y[None], cfg)[0], "log_map", "out-of-injectivity-radius")


def pi_matrix(M: Manifold, x, t, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    x = M.check_point(x)
    return _finite_or_raise(batch_pi(M, x[None], np.asarray(t, dtype=float)[None], cfg)[0], "pi_transport")


def canonicity_residual(M: Manifold, x, tau, s: float, sp: float, cfg: ExpLogConfig = DEFAULT) -> float:
    """Additivity of the affine parameter along one geodesic; ``tau`` must be a unit frame vector."""
    x = M.check_point(x)
    tau = np.asarray(tau, dtype=float)
    if abs(np.linalg.norm(tau) - 1.0) > 1e-9:
        raise ValueError("tau must have unit frame norm")
    r = batch_canonicity(M, x[None], tau[None], s, sp, cfg)
    return float(_finite_or_raise(r, "canonicity_residual", "out-of-injectivity-radius")[0])


def cauchy_residual(M: Manifold, x, xp, vp, cfg: ExpLogConfig = DEFAULT, eps: float | None = None, richardson: int = 0) -> float:
    x = M.check_point(x)
    xp = M.check_point(xp)
    r = batch_cauchy(M, x[None], xp[None], np.asarray(vp, dtype=float)[None], cfg, eps, richardson)
    return float(_finite_or_raise(r, "cauchy_residual", "out-of-injectivity-radius")[0])


def geodesic_velocity_at(M: Manifold, x, xp, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """Chart velocity at ``xp`` of the geodesic ``s -> exp_x(s log_x(xp))`` at ``s = 1``."""
    x = M.check_point(x)
    t = log_map(M, x, xp, cfg)
    h, k = batch_frame(M, x[None])
    _, v1, _ = batch_flow(M, x[None], (k[0] @ t)[None], cfg, length=np.linalg.norm(t))
    return _finite_or_raise(v1[0], "geodesic_velocity_at")

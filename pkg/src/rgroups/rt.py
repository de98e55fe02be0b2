"""The canonical deformed translation group of a metric chart.

Elements at a base point ``x`` are frame vectors ``t``; the group law is

    phi_x(t, t') = log_x(exp_{x'}(t')),    x' = exp_x(t),

with ``t'`` given in frame components at ``x'``. Everything else here
(the auxiliary maps, the connection ``gamma``, the third-order operator
``rho`` and the curvature operator) is read off this law by central finite
differences, never from the metric directly.

Array conventions: ``gamma[i, a, b] = gamma<e_a, e_b>^i``,
``rho[i, a, b, c] = rho<e_a, e_b, e_c>^i`` and
``curv[i, t, a, b] = R<e_t, e_a, e_b>^i``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fd
from .geodesic import DEFAULT, ExpLogConfig, _finite_or_raise, batch_exp, batch_log
from .manifold import Manifold, batch_frame


@dataclass(frozen=True)
class RTElement:
    x: np.ndarray
    t: np.ndarray


def batch_phi(M: Manifold, x, t, tp, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """Rows of ``phi_x(t, t')``; NaN where any leg fails."""
    x1 = batch_exp(M, x, t, cfg)
    y = batch_exp(M, x1, tp, cfg)
    return batch_log(M, x, y, cfg)


# ---------------------------------------------------------------- derivative engine

def phi_derivatives(M: Manifold, x, base_t, base_tp, requests, cfg: ExpLogConfig = DEFAULT,
                    h: float | None = None, richardson: int | None = None) -> np.ndarray:
    """Mixed directional derivatives of ``(x, t, t') -> phi_x(t, t')``.

    ``requests`` is a list of ``(dirs, orders)`` with ``dirs`` of shape
    ``(B, k, 3n)``: each direction stacks a chart displacement of the base
    point, a ``t`` and a ``t'`` component. All stencil points of all rows
    are integrated in one batch. Returns ``(B, len(requests), n)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B, n = x.shape
    base = np.concatenate([x, np.broadcast_to(base_t, (B, n)), np.broadcast_to(base_tp, (B, n))], axis=1)
    h = cfg.fd_eps if h is None else h
    richardson = cfg.richardson if richardson is None else richardson

    def F(rows):
        return batch_phi(M, rows[:, :n], rows[:, n:2 * n], rows[:, 2 * n:], cfg)

    return np.stack(fd.derivatives(F, base, requests, h, richardson), axis=1)


def _slot(B: int, n: int, which: int, vec) -> np.ndarray:
    """Direction rows ``(B, 3n)`` with ``vec`` placed in slot 0 (x), 1 (t) or 2 (t')."""
    d = np.zeros((B, 3 * n))
    d[:, which * n:(which + 1) * n] = vec
    return d


def _dirs(*rows) -> np.ndarray:
    return np.stack(rows, axis=1)


def _rows(M: Manifold, x, *vecs):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B = x.shape[0]
    out = [np.broadcast_to(np.asarray(v, dtype=float), (B, M.dim)).copy() for v in vecs]
    return x, out


# ---------------------------------------------------------------- batched operations

def batch_mu(M: Manifold, x, t, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """Matrices ``mu_x(t)`` (``(B, n, n)``), column ``a`` is ``d/de phi_x(e e_a, t)``."""
    x, (t,) = _rows(M, x, t)
    B, n = x.shape
    eye = np.eye(n)
    req = [(_dirs(_slot(B, n, 1, eye[a])), (1,)) for a in range(n)]
    return np.swapaxes(phi_derivatives(M, x, 0.0, t, req, cfg), 1, 2)


def batch_lambda(M: Manifold, x, t, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """Matrices ``lambda_x(t)``: frame components at ``exp_x(t)`` to frame components at ``x``."""
    x, (t,) = _rows(M, x, t)
    B, n = x.shape
    eye = np.eye(n)
    req = [(_dirs(_slot(B, n, 2, eye[a])), (1,)) for a in range(n)]
    return np.swapaxes(phi_derivatives(M, x, t, 0.0, req, cfg), 1, 2)


def batch_gamma_group(M: Manifold, x, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """``gamma[b, i, a, c] = d_t^a d_t'^c phi_x(0, 0)^i``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B, n = x.shape
    eye = np.eye(n)
    req = [(_dirs(_slot(B, n, 1, eye[a]), _slot(B, n, 2, eye[c])), (1, 1)) for a in range(n) for c in range(n)]
    vals = phi_derivatives(M, x, 0.0, 0.0, req, cfg)
    return np.moveaxis(vals.reshape(B, n, n, n), 3, 1)


def batch_rho(M: Manifold, x, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """``rho[b, i, a, p, q] = d_t^a d_t'^p d_t'^q phi_x(0, 0)^i``, symmetric in ``p, q``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    B, n = x.shape
    eye = np.eye(n)
    keys, req = [], []
    for a in range(n):
        for p in range(n):
            for q in range(p, n):
                if p == q:
                    req.append((_dirs(_slot(B, n, 1, eye[a]), _slot(B, n, 2, eye[p])), (1, 2)))
                else:
                    req.append((_dirs(_slot(B, n, 1, eye[a]), _slot(B, n, 2, eye[p]), _slot(B, n, 2, eye[q])), (1, 1, 1)))
                keys.append((a, p, q))
    vals = phi_derivatives(M, x, 0.0, 0.0, req, cfg)
    rho = np.empty((B, n, n, n, n))
    for r, (a, p, q) in enumerate(keys):
        rho[:, :, a, p, q] = vals[:, r]
        rho[:, :, a, q, p] = vals[:, r]
    return rho


def curvature_from_rho(rho: np.ndarray) -> np.ndarray:
    """``R<t, l', l> = rho<l, l', t> - rho<l', l, t>`` as ``curv[..., i, t, l', l]``."""
    # rho[..., i, l, l', t] -> [..., i, t, l', l]
    a = np.einsum("...iabc->...icba", rho)
    b = np.einsum("...iabc->...icab", rho)
    return a - b


def batch_curvature_group(M: Manifold, x, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    return curvature_from_rho(batch_rho(M, x, cfg))


def batch_gram_second_derivative(M: Manifold, x, tau, theta, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """``d^2/ds^2 |lambda_x(s tau) theta|^2`` at ``s = 0`` by nested central differences."""
    x, (tau, theta) = _rows(M, x, tau, theta)
    B, n = x.shape
    h = cfg.fd_eps
    off, w = fd.stencil((2,), h, cfg.richardson)
    s = off[:, 0]
    P = len(s)
    xs = np.repeat(x, P, axis=0)
    ts = (s[None, :, None] * tau[:, None, :]).reshape(B * P, n)
    th = np.repeat(theta, P, axis=0)
    req = [(_dirs(_slot(B * P, n, 2, th)), (1,))]
    lam = phi_derivatives(M, xs, ts, 0.0, req, cfg)[:, 0].reshape(B, P, n)
    G = np.einsum("bpi,bpi->bp", lam, lam)
    return G @ w


# ---------------------------------------------------------------- public single-point API

def _point(M: Manifold, x):
    return M.check_point(x)


def rt_multiply(M: Manifold, x, t, tp, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """``phi_x(t, t')`` with ``t'`` in frame components at ``exp_x(t)``."""
    x = _point(M, x)
    t = np.asarray(t, dtype=float)
    tp = np.asarray(tp, dtype=float)
    if not np.any(tp):
        return t.copy()
    return _finite_or_raise(batch_phi(M, x[None], t[None], tp[None], cfg)[0], "rt_multiply", "out-of-injectivity-radius")


def rt_act(M: Manifold, x, t, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    from .geodesic import exp_map
    return exp_map(M, x, t, cfg)


def lambda_transport(M: Manifold, x, t, theta, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """``lambda_x(t)<theta'>``: derivative of ``phi_x(t, e theta')`` at ``e = 0``."""
    x = _point(M, x)
    B, n = 1, M.dim
    req = [(_dirs(_slot(B, n, 2, np.asarray(theta, dtype=float))), (1,))]
    out = phi_derivatives(M, x[None], np.asarray(t, dtype=float), 0.0, req, cfg)[0, 0]
    return _finite_or_raise(out, "lambda_transport", "out-of-injectivity-radius")


def mu_map(M: Manifold, x, t, l, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    """``mu_x(t)<l>``: derivative of ``phi_x(e l, t)`` at ``e = 0``."""
    x = _point(M, x)
    B, n = 1, M.dim
    req = [(_dirs(_slot(B, n, 1, np.asarray(l, dtype=float))), (1,))]
    out = phi_derivatives(M, x[None], 0.0, np.asarray(t, dtype=float), req, cfg)[0, 0]
    return _finite_or_raise(out, "mu_map", "out-of-injectivity-radius")


def gamma_from_group(M: Manifold, x, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    x = _point(M, x)
    return _finite_or_raise(batch_gamma_group(M, x[None], cfg)[0], "gamma_from_group", "out-of-injectivity-radius")


def rho_at(M: Manifold, x, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    x = _point(M, x)
    return _finite_or_raise(batch_rho(M, x[None], cfg)[0], "rho_at", "out-of-injectivity-radius")


def curvature_from_group(M: Manifold, x, cfg: ExpLogConfig = DEFAULT) -> np.ndarray:
    return curvature_from_rho(rho_at(M, x, cfg))


def gram_second_derivative(M: Manifold, x, tau, theta, cfg: ExpLogConfig = DEFAULT) -> float:
    x = _point(M, x)
    out = batch_gram_second_derivative(M, x[None], tau, theta, cfg)
    return float(_finite_or_raise(out, "gram_second_derivative", "out-of-injectivity-radius")[0])


def frame_vector_at(M: Manifold, x, chart_vector) -> np.ndarray:
    """Frame components ``h_x v`` of a chart vector."""
    h, _ = batch_frame(M, np.asarray(x, dtype=float)[None])
    return h[0] @ np.asarray(chart_vector, dtype=float)

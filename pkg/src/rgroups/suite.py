"""Identity catalogue evaluated on seeded samples.

Every identity maps a batch of samples to one residual per sample; the
residual is compared against a fixed absolute tolerance. Identities built
from finite differences of the group laws use the step and Richardson
level of the :class:`ExpLogConfig`; analytic identities use the metric
jets directly.

Array conventions follow :mod:`rgroups.manifold`: ``gamma[b, i, a, c]``,
``C[b, i, a, c]``, ``curv[b, i, t, a, c]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from . import dp, fd, geodesic as gd, manifold as mf, rt
from .errors import RGroupsError
from .geodesic import DEFAULT, ExpLogConfig
from .manifold import Manifold

FD2 = 1e-5  # second-order expansion coefficients from the group laws
CURV = 5e-3  # third-order coefficients (curvature level)


@dataclass(frozen=True)
class Samples:
    x: np.ndarray
    t: np.ndarray
    tp: np.ndarray
    tpp: np.ndarray
    tau: np.ndarray  # unit frame vectors
    theta: np.ndarray  # unit frame vectors
    a: np.ndarray  # unconstrained frame vectors
    b: np.ndarray
    s: np.ndarray
    sp: np.ndarray
    r: np.ndarray  # rotations
    rp: np.ndarray
    rpp: np.ndarray

    def __len__(self):
        return len(self.x)


def _unit(rng, B, n):
    v = rng.standard_normal((B, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def draw_samples(M: Manifold, count: int, seed: int, max_norm: float = 0.3) -> Samples:
    """Seeded sample points and parameters; translation parameters have norm in ``[0.05, max_norm]``."""
    if count < 1:
        raise ValueError("sample count must be at least 1")
    rng = np.random.default_rng(seed)
    n = M.dim
    lo, hi = M.sample_box()
    x = rng.uniform(lo, hi, (count, n))

    def small():
        return _unit(rng, count, n) * rng.uniform(0.05, max_norm, (count, 1))

    t, tp, tpp = small(), small(), small()
    tau, theta = _unit(rng, count, n), _unit(rng, count, n)
    a, b = rng.standard_normal((count, n)), rng.standard_normal((count, n))
    s, sp = rng.uniform(0.05, max_norm, count), rng.uniform(0.05, max_norm, count)
    rots = [np.array([dp.random_rotation(rng, n) for _ in range(count)]) for _ in range(3)]
    return Samples(x, t, tp, tpp, tau, theta, a, b, s, sp, *rots)


# ---------------------------------------------------------------- shared evaluation context

def _max(arr: np.ndarray) -> np.ndarray:
    """Per-row max |.| over all trailing axes; NaN anywhere in a row gives NaN."""
    a = np.abs(arr.reshape(len(arr), -1))
    out = a.max(axis=1, initial=0.0)
    out[np.any(np.isnan(a), axis=1)] = np.nan
    return out


def _cyclic(f, n):
    """``f(a, b, c) + f(b, c, a) + f(c, a, b)`` summed per index triple, as a stacked array."""
    return np.stack([f(a, b, c) + f(b, c, a) + f(c, a, b) for a in range(n) for b in range(n) for c in range(n)], axis=1)


@dataclass
class Context:
    M: Manifold
    S: Samples
    cfg: ExpLogConfig = DEFAULT

    @property
    def n(self) -> int:
        return self.M.dim

    @property
    def B(self) -> int:
        return len(self.S)

    def phi_deriv(self, base_t, base_tp, requests):
        return rt.phi_derivatives(self.M, self.S.x, base_t, base_tp, requests, self.cfg)

    def slot(self, which, vec):
        return rt._slot(self.B, self.n, which, vec)

    # analytic quantities
    @cached_property
    def frame(self):
        return mf.batch_frame(self.M, self.S.x)

    @cached_property
    def gamma(self):
        return mf.batch_gamma(self.M, self.S.x)

    @cached_property
    def C(self):
        return mf.batch_anholonomy(self.M, self.S.x)

    @cached_property
    def curv(self):
        return mf.batch_riemann_frame(self.M, self.S.x)

    def chart(self, vec):
        """Chart displacement ``k_x vec`` per row."""
        return np.einsum("bij,bj->bi", self.frame[1], vec)

    # group-law quantities
    @cached_property
    def gamma_group(self):
        return rt.batch_gamma_group(self.M, self.S.x, self.cfg)

    @cached_property
    def C_group(self):
        g = self.gamma_group
        return g - np.swapaxes(g, 2, 3)

    @cached_property
    def rho(self):
        return rt.batch_rho(self.M, self.S.x, self.cfg)

    @cached_property
    def curv_group(self):
        return rt.curvature_from_rho(self.rho)

    @cached_property
    def dgamma_group(self):
        """``dgamma[b, i, a, c, m] = e_m gamma<e_a, e_c>^i`` by mixed differences in (x, t, t')."""
        n, eye = self.n, np.eye(self.n)
        req = [(rt._dirs(self.slot(0, self.chart(np.broadcast_to(eye[m], (self.B, n)))), self.slot(1, eye[a]), self.slot(2, eye[c])), (1, 1, 1))
               for a in range(n) for c in range(n) for m in range(n)]
        vals = self.phi_deriv(0.0, 0.0, req)
        return np.moveaxis(vals.reshape(self.B, n, n, n, n), 4, 1)

    @cached_property
    def sigma(self):
        return dp.batch_sigma(self.M, self.S.x, self.cfg)

    @cached_property
    def x1(self):
        return gd.batch_exp(self.M, self.S.x, self.S.t, self.cfg)


# ---------------------------------------------------------------- identity definitions

@dataclass(frozen=True)
class Identity:
    identity_id: str
    eq_ref: str
    tolerance: float
    evaluate: Callable[[Context], np.ndarray]
    uses: tuple[str, ...] = ()


CATALOGUE: list[Identity] = []


def identity(identity_id: str, eq_ref: str, tolerance: float, uses: tuple[str, ...] = ()):
    def register(fn):
        CATALOGUE.append(Identity(identity_id, eq_ref, tolerance, fn, uses))
        return fn
    return register


# --- charts, frames and classical curvature

@identity("frame_metric", "orthonormal frame reproduces the metric: h^T h = g (relative)", 1e-12)
def _frame_metric(c: Context):
    g, _, _ = mf.batch_metric(c.M, c.S.x, order=1)
    h, _ = c.frame
    return _max(np.swapaxes(h, 1, 2) @ h - g) / _max(g)


@identity("christoffel_symmetry", "Christoffel symbols are symmetric in their lower indices", 1e-12)
def _christoffel_symmetry(c: Context):
    G = mf.batch_christoffel(c.M, c.S.x)
    return _max(G - np.swapaxes(G, 2, 3))


@identity("metric_compatibility", "connection is metric compatible: d_k g_ij = g_il Gamma^l_jk + g_jl Gamma^l_ik", 1e-10)
def _metric_compatibility(c: Context):
    g, dg, _ = mf.batch_metric(c.M, c.S.x, order=1)
    G = mf.batch_christoffel(c.M, c.S.x)
    low = np.einsum("bil,bljk->bijk", g, G)
    return _max(dg - low - np.swapaxes(low, 1, 2))


@identity("frame_connection_antisymmetry", "frame connection is skew: eta(v, gamma(u, v)) = 0", 1e-9)
def _gamma_antisymmetry(c: Context):
    return _max(c.gamma + np.transpose(c.gamma, (0, 3, 2, 1)))


@identity("anholonomy_torsion_free", "frame anholonomy equals the antisymmetrized frame connection", 1e-9)
def _anholonomy(c: Context):
    return _max(c.C - (c.gamma - np.swapaxes(c.gamma, 2, 3)))


@identity("curvature_cyclic_classical", "first Bianchi identity of the classical curvature", 1e-9)
def _curvature_cyclic(c: Context):
    R = c.curv
    return _max(R + np.einsum("bitac->bicta", R) + np.einsum("bitac->biact", R))


@identity("curvature_metric_antisymmetry", "classical curvature is skew in the transported pair: eta(u, R<w, a, b>) = -eta(w, R<u, a, b>)", 1e-9)
def _curvature_metric(c: Context):
    return _max(c.curv + np.swapaxes(c.curv, 1, 2))


def _riemann_coord_flat(M, rows):
    B, n = rows.shape
    return mf.batch_riemann_coord(M, rows).reshape(B, -1)


@identity("curvature_second_bianchi_classical", "second Bianchi identity of the classical curvature (covariant derivative by differences of the analytic tensor)", 1e-8)
def _second_bianchi(c: Context):
    n, B = c.n, c.B
    eye = np.eye(n)
    req = [(np.broadcast_to(eye[m][None], (B, 1, n)), (1,)) for m in range(n)]
    dR = np.stack(fd.derivatives(lambda rows: _riemann_coord_flat(c.M, rows), c.S.x, req, 1e-3, 1), axis=-1)
    dR = dR.reshape(B, n, n, n, n, n)  # [b, p, q, c, d, m] = d_m R^p_qcd
    R = mf.batch_riemann_coord(c.M, c.S.x)
    G = mf.batch_christoffel(c.M, c.S.x)
    nab = (dR + np.einsum("bpmr,brqcd->bpqcdm", G, R) - np.einsum("brmq,bprcd->bpqcdm", G, R)
           - np.einsum("brmc,bpqrd->bpqcdm", G, R) - np.einsum("brmd,bpqcr->bpqcdm", G, R))
    cyc = nab + np.einsum("bpqcdm->bpqdmc", nab) + np.einsum("bpqcdm->bpqmcd", nab)
    return _max(cyc)


# --- geodesics and canonical deformation maps

@identity("exp_log_inverse", "log inverts exp: log_x(exp_x(t)) = t", 1e-7, ("t",))
def _exp_log(c: Context):
    return _max(gd.batch_log(c.M, c.S.x, c.x1, c.cfg) - c.S.t)


@identity("canonicity_additivity", "affine parameter is additive along a geodesic: phi_x(s tau, s' tau_x') = (s + s') tau", 1e-7, ("tau", "s", "sp"))
def _canonicity(c: Context):
    return gd.batch_canonicity(c.M, c.S.x, c.S.tau, c.S.s, c.S.sp, c.cfg)


@identity("scale_attachment", "four-fold attachment of the scale t/2 along its own geodesic equals one exp of 2t", 4e-7, ("t",))
def _attachment(c: Context):
    M, cfg, x, t = c.M, c.cfg, c.S.x, 0.5 * c.S.t
    _, k = c.frame
    xi, vi = x, np.einsum("bij,bj->bi", k, t)
    for _ in range(4):
        # continuing the flow from (x_i, v_i) is exp at x_i of the transported tangent
        xi, vi, _ = gd.batch_flow(M, xi, vi, cfg, length=np.linalg.norm(t, axis=1))
    return _max(xi - gd.batch_exp(M, x, 4 * t, cfg))


@identity("speed_conservation", "geodesic speed g(x', x') is conserved (relative drift)", 1e-9, ("t",))
def _speed(c: Context):
    M, x = c.M, c.S.x
    _, k = c.frame
    v = np.einsum("bij,bj->bi", k, 2 * c.S.t)
    xs, vs, _ = gd.batch_flow(M, x, v, c.cfg, record=True)
    N, B, n = xs.shape
    g, _, _ = mf.batch_metric(M, xs.reshape(N * B, n), order=1)
    speed = np.einsum("pi,pij,pj->p", vs.reshape(N * B, n), g, vs.reshape(N * B, n)).reshape(N, B)
    return _max((speed - speed[0]).T) / np.abs(speed[0])


def _end_velocity(c: Context):
    _, k = c.frame
    v = np.einsum("bij,bj->bi", k, c.S.t)
    x1, v1, _ = gd.batch_flow(c.M, c.S.x, v, c.cfg, length=np.linalg.norm(c.S.t, axis=1))
    return x1, v1


def _log_jacobian_along(c: Context, x1, v1):
    def F(rows):
        return gd.batch_log(c.M, np.repeat(c.S.x, len(rows) // c.B, axis=0), rows, c.cfg)
    return fd.derivatives(F, x1, [(v1[:, None, :], (1,))], c.cfg.fd_eps, c.cfg.richardson)[0]


@identity("log_first_integral", "d log_x(x') along the geodesic velocity at x' is constant and equals the initial parameter", 1e-6, ("t",))
def _first_integral_log(c: Context):
    x1, v1 = _end_velocity(c)
    return _max(_log_jacobian_along(c, x1, v1) - c.S.t)


@identity("log_gram_metric", "eta(d log_x v, d log_x v) = g_x'(v, v) for the geodesic velocity v at x'", 1e-6, ("t",))
def _log_gram(c: Context):
    x1, v1 = _end_velocity(c)
    u = _log_jacobian_along(c, x1, v1)
    g1, _, _ = mf.batch_metric(c.M, x1, order=1)
    return np.abs(np.einsum("bi,bi->b", u, u) - np.einsum("bi,bij,bj->b", v1, g1, v1))


@identity("cauchy_log_equation", "log_x solves (d2 H - dH o Gamma)<v, v> = 0 along geodesics from x", 1e-5, ("t",))
def _cauchy(c: Context):
    x1, v1 = _end_velocity(c)
    return gd.batch_cauchy(c.M, c.S.x, x1, v1, c.cfg, richardson=c.cfg.richardson)


# --- deformed translation group

@identity("associativity", "associativity of the translation group law", 1e-6, ("t", "tp", "tpp"))
def _associativity(c: Context):
    M, cfg, x, S = c.M, c.cfg, c.S.x, c.S
    x1 = c.x1
    left = rt.batch_phi(M, x, rt.batch_phi(M, x, S.t, S.tp, cfg), S.tpp, cfg)
    right = rt.batch_phi(M, x, S.t, rt.batch_phi(M, x1, S.tp, S.tpp, cfg), cfg)
    return _max(left - right)


@identity("unit_and_inverse", "unit laws and the inverse parameter log_x'(x): phi(t, 0) = phi(0, t) = t, phi(t, log_x'(x)) = 0", 1e-7, ("t",))
def _unit_inverse(c: Context):
    M, cfg, x, t = c.M, c.cfg, c.S.x, c.S.t
    z = np.zeros_like(t)
    inv = gd.batch_log(M, c.x1, x, cfg)
    r = [rt.batch_phi(M, x, t, z, cfg) - t, rt.batch_phi(M, x, z, t, cfg) - t, rt.batch_phi(M, x, t, inv, cfg)]
    return np.max([_max(v) for v in r], axis=0)


@identity("action_composition", "composition of the action: exp_x'(t') = exp_x(phi_x(t, t'))", 1e-7, ("t", "tp"))
def _action(c: Context):
    M, cfg, x, S = c.M, c.cfg, c.S.x, c.S
    return _max(gd.batch_exp(M, c.x1, S.tp, cfg) - gd.batch_exp(M, x, rt.batch_phi(M, x, S.t, S.tp, cfg), cfg))


@identity("lie_equation_left", "generalized Lie equation: d_t phi(t, t')<mu(t) l> = mu(phi(t, t')) l + e_l phi(t, t')", FD2, ("t", "tp"))
def _lie_left(c: Context):
    n, B, S, M, cfg = c.n, c.B, c.S, c.M, c.cfg
    eye = np.eye(n)
    mu_t = rt.batch_mu(M, S.x, S.t, cfg)
    phi = rt.batch_phi(M, S.x, S.t, S.tp, cfg)
    mu_phi = rt.batch_mu(M, S.x, phi, cfg)
    req = []
    for l in range(n):
        req.append((rt._dirs(c.slot(1, mu_t[:, :, l])), (1,)))
        req.append((rt._dirs(c.slot(0, c.chart(np.broadcast_to(eye[l], (B, n))))), (1,)))
    d = c.phi_deriv(S.t, S.tp, req).reshape(B, n, 2, n)
    return _max(d[:, :, 0] - np.swapaxes(mu_phi, 1, 2) - d[:, :, 1])


@identity("lie_equation_right", "generalized Lie equation: d_t' phi(t, t')<lambda_x'(t') l> = lambda_x(phi(t, t')) l", FD2, ("t", "tp"))
def _lie_right(c: Context):
    n, B, S, M, cfg = c.n, c.B, c.S, c.M, c.cfg
    lam_tp = rt.batch_lambda(M, c.x1, S.tp, cfg)
    phi = rt.batch_phi(M, S.x, S.t, S.tp, cfg)
    lam_phi = rt.batch_lambda(M, S.x, phi, cfg)
    req = [(rt._dirs(c.slot(2, lam_tp[:, :, l])), (1,)) for l in range(n)]
    d = c.phi_deriv(S.t, S.tp, req)
    return _max(d - np.swapaxes(lam_phi, 1, 2))


def _exp_derivatives(c: Context, base_t, requests):
    n = c.n
    base = np.concatenate([c.S.x, np.broadcast_to(base_t, (c.B, n))], axis=1)

    def F(rows):
        return gd.batch_exp(c.M, rows[:, :n], rows[:, n:], c.cfg)

    return np.stack(fd.derivatives(F, base, requests, c.cfg.fd_eps, c.cfg.richardson), axis=1)


def _xt(c: Context, xdir=None, tdir=None):
    d = np.zeros((c.B, 2 * c.n))
    if xdir is not None:
        d[:, :c.n] = xdir
    if tdir is not None:
        d[:, c.n:] = tdir
    return d


@identity("lie_equation_action", "Lie equations of the action: d_t exp_x(t)<mu(t) l> = e_l exp_x(t) and d_t exp_x(t)<lambda(t) l> = k_x' l", FD2, ("t",))
def _lie_action(c: Context):
    n, B, S, M, cfg = c.n, c.B, c.S, c.M, c.cfg
    eye = np.eye(n)
    mu_t = rt.batch_mu(M, S.x, S.t, cfg)
    lam_t = rt.batch_lambda(M, S.x, S.t, cfg)
    req = []
    for l in range(n):
        req.append((rt._dirs(_xt(c, tdir=mu_t[:, :, l])), (1,)))
        req.append((rt._dirs(_xt(c, xdir=c.chart(np.broadcast_to(eye[l], (B, n))))), (1,)))
        req.append((rt._dirs(_xt(c, tdir=lam_t[:, :, l])), (1,)))
    d = _exp_derivatives(c, S.t, req).reshape(B, n, 3, n)
    _, k1 = mf.batch_frame(M, c.x1)
    return np.maximum(_max(d[:, :, 0] - d[:, :, 1]), _max(d[:, :, 2] - np.swapaxes(k1, 1, 2)))


@identity("maurer_cartan_left", "Maurer-Cartan equation for mu: (e_l mu) l' + (d_{mu l'} mu) l - (l <-> l') = mu C<l, l'>", FD2, ("t",))
def _mc_left(c: Context):
    n, B, S, M, cfg = c.n, c.B, c.S, c.M, c.cfg
    eye = np.eye(n)
    mu = rt.batch_mu(M, S.x, S.t, cfg)
    req = []
    for l in range(n):
        for lp in range(n):
            xl = c.chart(np.broadcast_to(eye[l], (B, n)))
            req.append((rt._dirs(c.slot(0, xl), c.slot(1, eye[lp])), (1, 1)))
            req.append((rt._dirs(c.slot(1, eye[l]), c.slot(2, mu[:, :, lp])), (1, 1)))
    d = c.phi_deriv(0.0, S.t, req).reshape(B, n, n, 2, n)
    T = d[:, :, :, 0] + d[:, :, :, 1]  # [b, l, l', i]
    lhs = T - np.swapaxes(T, 1, 2)
    rhs = np.einsum("bij,bjlm->blmi", mu, c.C)
    return _max(lhs - rhs)


@identity("maurer_cartan_right", "Maurer-Cartan equation for lambda: (d_{lambda l} lambda) l' - (l <-> l') = lambda C_x'<l, l'>", FD2, ("t",))
def _mc_right(c: Context):
    n, B, S, M, cfg = c.n, c.B, c.S, c.M, c.cfg
    eye = np.eye(n)
    lam = rt.batch_lambda(M, S.x, S.t, cfg)
    req = [(rt._dirs(c.slot(1, lam[:, :, l]), c.slot(2, eye[lp])), (1, 1)) for l in range(n) for lp in range(n)]
    d = c.phi_deriv(S.t, 0.0, req).reshape(B, n, n, n)
    lhs = d - np.swapaxes(d, 1, 2)
    rhs = np.einsum("bij,bjlm->blmi", lam, mf.batch_anholonomy(M, c.x1))
    return _max(lhs - rhs)


@identity("maurer_cartan_frame", "frame Maurer-Cartan equation from the action: (e_l k) l' - (e_l' k) l = k C<l, l'>", FD2)
def _mc_frame(c: Context):
    n, B = c.n, c.B
    eye = np.eye(n)
    req = [(rt._dirs(_xt(c, xdir=c.chart(np.broadcast_to(eye[l], (B, n)))), _xt(c, tdir=np.broadcast_to(eye[lp], (B, n)))), (1, 1))
           for l in range(n) for lp in range(n)]
    d = _exp_derivatives(c, np.zeros((B, n)), req).reshape(B, n, n, n)
    lhs = d - np.swapaxes(d, 1, 2)
    rhs = np.einsum("bij,bjlm->blmi", c.frame[1], c.C)
    return _max(lhs - rhs)


@identity("group_connection", "second-order coefficient of the group law is the frame connection gamma", FD2)
def _group_connection(c: Context):
    return _max(c.gamma_group - c.gamma)


@identity("group_torsion_free", "antisymmetric second-order coefficient is the frame anholonomy", FD2)
def _group_torsion(c: Context):
    return _max(c.C_group - c.C)


@identity("group_jacobi", "Jacobi relation: e_l C<l', l''> + C<l, C<l', l''>> + cyclic = 0", CURV)
def _group_jacobi(c: Context):
    dG = c.dgamma_group  # [b, i, a, c, m]
    dC = dG - np.swapaxes(dG, 2, 3)
    C = c.C_group

    def term(a, b, cc):
        return dC[:, :, b, cc, a] + np.einsum("bim,bm->bi", C[:, :, a, :], C[:, :, b, cc])

    return _max(_cyclic(term, c.n))


@identity("group_structure_equation", "structure equation: e_l gamma<l', t> + gamma<l, gamma<l', t>> - (l <-> l') = R<t, l, l'> + gamma<C<l, l'>, t>", CURV)
def _group_structure(c: Context):
    dG, G, C, R = c.dgamma_group, c.gamma_group, c.C_group, c.curv_group
    # lhs[b, i, t, a, c]
    first = np.einsum("bictm->bitmc", dG)  # e_m gamma<c, t>, indexed [i, t, a=m, c]
    quad = np.einsum("biam,bmct->bitac", G, G)
    lhs = first + quad
    lhs = lhs - np.swapaxes(lhs, 3, 4)
    rhs = R + np.einsum("bmac,bimt->bitac", C, G)
    return _max(lhs - rhs)


@identity("group_curvature", "antisymmetrized third-order coefficient equals the classical curvature", CURV)
def _group_curvature(c: Context):
    return _max(c.curv_group - c.curv)


@identity("group_curvature_cyclic", "cyclic identity of the group curvature operator", CURV)
def _group_cyclic(c: Context):
    R = c.curv_group
    return _max(R + np.einsum("bitac->bicta", R) + np.einsum("bitac->biact", R))


@identity("third_order_cyclic", "cyclic sum of the third-order coefficient rho vanishes for the canonical group", CURV)
def _rho_cyclic(c: Context):
    rho = c.rho
    return _max(rho + np.einsum("ziabc->zibca", rho) + np.einsum("ziabc->zicab", rho))


@identity("third_order_two_thirds", "rho<l', l, l> = (2/3) R<l, l, l'>", CURV)
def _rho_two_thirds(c: Context):
    lhs = np.einsum("biraa->bira", c.rho)  # rho<l', l, l> as [i, l', l]
    rhs = (2.0 / 3.0) * np.einsum("biaar->bira", c.curv)  # R<l, l, l'> -> [i, l', l]
    return _max(lhs - rhs)


@identity("canonical_mu", "canonicity criterion: mu_x(s tau) tau = tau + s gamma<tau, tau>", FD2, ("tau", "s"))
def _canonical_mu(c: Context):
    S = c.S
    t = S.s[:, None] * S.tau
    d = c.phi_deriv(0.0, t, [(rt._dirs(c.slot(1, S.tau)), (1,))])[:, 0]
    return _max(d - S.tau - S.s[:, None] * mf.apply2(c.gamma, S.tau, S.tau))


def _tangent_at_end(c: Context, tau, s):
    _, k = c.frame
    v = np.einsum("bij,bj->bi", k, s[:, None] * tau)
    x1, v1, _ = gd.batch_flow(c.M, c.S.x, v, c.cfg, length=s)
    h1, _ = mf.batch_frame(c.M, x1)
    return x1, np.einsum("bij,bj->bi", h1, v1) / s[:, None]


@identity("canonical_lambda", "canonicity criterion: lambda_x(s tau) tau_x' = tau", 1e-6, ("tau", "s"))
def _canonical_lambda(c: Context):
    S = c.S
    _, tau1 = _tangent_at_end(c, S.tau, S.s)
    d = c.phi_deriv(S.s[:, None] * S.tau, 0.0, [(rt._dirs(c.slot(2, tau1)), (1,))])[:, 0]
    return _max(d - S.tau)


@identity("tangent_norm_preserved", "lambda-transport preserves the length of the transported geodesic tangent", 1e-6, ("tau", "s"))
def _tangent_norm(c: Context):
    S = c.S
    _, tau1 = _tangent_at_end(c, S.tau, S.s)
    d = c.phi_deriv(S.s[:, None] * S.tau, 0.0, [(rt._dirs(c.slot(2, tau1)), (1,))])[:, 0]
    return np.abs(np.linalg.norm(d, axis=1) - np.linalg.norm(tau1, axis=1))


@identity("group_metric_compatibility", "connection read off the second derivative of log_x at x is metric compatible", FD2)
def _group_compat(c: Context):
    n, B, M, cfg = c.n, c.B, c.M, c.cfg
    eye = np.eye(n)

    def F(rows):
        return gd.batch_log(M, np.repeat(c.S.x, len(rows) // B, axis=0), rows, cfg)

    req = []
    for p in range(n):
        for q in range(n):
            dirs = np.stack([np.broadcast_to(eye[p], (B, n)), np.broadcast_to(eye[q], (B, n))], axis=1)
            req.append((dirs if p != q else dirs[:, :1], (1, 1) if p != q else (2,)))
    d2H = np.stack(fd.derivatives(F, c.S.x, req, cfg.fd_eps, cfg.richardson), axis=1).reshape(B, n, n, n)
    G = np.einsum("bli,bpqi->blpq", c.frame[1], d2H)
    g, dg, _ = mf.batch_metric(M, c.S.x, order=1)
    low = np.einsum("bil,bljk->bijk", g, G)
    return _max(dg - low - np.swapaxes(low, 1, 2))


@identity("group_connection_antisymmetry", "connection from the group law is skew: eta(v, gamma(u, v)) = 0", FD2)
def _group_gamma_skew(c: Context):
    G = c.gamma_group
    return _max(G + np.transpose(G, (0, 3, 2, 1)))


@identity("transverse_gram_curvature", "d2/ds2 |lambda_x(s tau) theta|^2 at 0 = -(2/3) eta(theta, R<tau, tau, theta>)", CURV, ("tau", "theta"))
def _gram(c: Context):
    S = c.S
    lhs = rt.batch_gram_second_derivative(c.M, S.x, S.tau, S.theta, c.cfg)
    rhs = -(2.0 / 3.0) * np.einsum("bi,bi->b", S.theta, mf.apply3(c.curv, S.tau, S.tau, S.theta))
    return np.abs(lhs - rhs)


# --- parallel transport group

@identity("pi_orthogonality", "pi-transport is a rotation: pi^T pi = 1", 1e-9, ("t",))
def _pi_orth(c: Context):
    _, P = gd.batch_transport(c.M, c.S.x, c.S.t, c.cfg)
    return _max(np.swapaxes(P, 1, 2) @ P - np.eye(c.n))


@identity("pi_lambda_tangent", "pi- and lambda-transport agree on geodesic tangents", 1e-6, ("tau", "s"))
def _pi_lambda(c: Context):
    S = c.S
    _, tau1 = _tangent_at_end(c, S.tau, S.s)
    pi = gd.batch_pi(c.M, S.x, S.s[:, None] * S.tau, c.cfg)
    lam = c.phi_deriv(S.s[:, None] * S.tau, 0.0, [(rt._dirs(c.slot(2, tau1)), (1,))])[:, 0]
    return _max(np.einsum("bij,bj->bi", pi, tau1) - lam)


def _dp_mul(c: Context, x, t, r, tp, rp):
    t2, A, Bm, C = dp.batch_law(c.M, x, t, tp, c.cfg)
    return t2, r @ A @ rp @ Bm @ C


@identity("dp_associativity", "associativity of the parallel transport group law (translation and rotation parts)", FD2, ("t", "r", "tp", "rp", "tpp", "rpp"))
def _dp_assoc(c: Context):
    S, x = c.S, c.S.x
    x1 = c.x1
    t12, r12 = _dp_mul(c, x, S.t, S.r, S.tp, S.rp)
    tl, rl = _dp_mul(c, x, t12, r12, S.tpp, S.rpp)
    t23, r23 = _dp_mul(c, x1, S.tp, S.rp, S.tpp, S.rpp)
    tr, rr = _dp_mul(c, x, S.t, S.r, t23, r23)
    return np.maximum(_max(tl - tr), np.linalg.norm(rl - rr, ord=2, axis=(1, 2)))


@identity("dp_extended_canonicity", "pure translations along one geodesic compose additively with trivial rotation", 1e-6, ("tau", "s", "sp"))
def _dp_canon(c: Context):
    S = c.S
    _, tau1 = _tangent_at_end(c, S.tau, S.s)
    eye = np.broadcast_to(np.eye(c.n), (c.B, c.n, c.n))
    t2, r2 = _dp_mul(c, S.x, S.s[:, None] * S.tau, eye, S.sp[:, None] * tau1, eye)
    return np.maximum(_max(t2 - (S.s + S.sp)[:, None] * S.tau), _max(r2 - np.eye(c.n)))


@identity("l_map_composition", "L_x(Phi(g, g')) = L_x(g) L_x'(g') with L(t, r) = r pi(t)", FD2, ("t", "r", "tp", "rp"))
def _l_map(c: Context):
    S, M, cfg = c.S, c.M, c.cfg
    t2, r2 = _dp_mul(c, S.x, S.t, S.r, S.tp, S.rp)
    L = S.r @ gd.batch_pi(M, S.x, S.t, cfg) @ S.rp @ gd.batch_pi(M, c.x1, S.tp, cfg)
    return np.linalg.norm(r2 @ gd.batch_pi(M, S.x, t2, cfg) - L, ord=2, axis=(1, 2))


@identity("transport_consistency", "infinitesimal pi-transport equals infinitesimal lambda-transport", FD2)
def _consistency(c: Context):
    return dp.batch_consistency(c.M, c.S.x, c.cfg)


@identity("moving_frame_connection", "connection from the moving-frame limit equals gamma", FD2)
def _frame_limit(c: Context):
    return _max(dp.batch_frame_connection(c.M, c.S.x, c.cfg) - c.gamma)


@identity("sigma_translation_block", "translation block of the parallel transport structure operator is the anholonomy", CURV)
def _sigma_T(c: Context):
    return _max(c.sigma[0] - c.C)


@identity("sigma_rotation_block", "rotation block of the parallel transport structure operator is the classical curvature", CURV)
def _sigma_R(c: Context):
    return _max(c.sigma[1] - c.curv)


@identity("sigma_vs_group_curvature", "second-order rotation block equals the third-order translation group curvature", CURV)
def _sigma_vs_rt(c: Context):
    return _max(c.sigma[1] - c.curv_group)


@identity("transport_jacobi", "Jacobi identity of the parallel transport structure operator on translation slots", CURV)
def _dr_jacobi(c: Context):
    n, B, M, cfg = c.n, c.B, c.M, c.cfg
    eye = np.eye(n)

    def F(rows):
        T, R = dp.batch_sigma(M, rows, cfg)
        return np.concatenate([T.reshape(len(rows), -1), R.reshape(len(rows), -1)], axis=1)

    req = [(c.chart(np.broadcast_to(eye[m], (B, n)))[:, None, :], (1,)) for m in range(n)]
    d = np.stack(fd.derivatives(F, c.S.x, req, cfg.fd_eps, cfg.richardson), axis=-1)
    dT = d[:, :n ** 3].reshape(B, n, n, n, n)  # [b, i, a, c, m]
    dR = d[:, n ** 3:].reshape(B, n, n, n, n, n)  # [b, i, j, a, c, m]
    T, R = c.sigma
    G = dp.batch_frame_connection(M, c.S.x, cfg)  # [b, i, m, j]: gamma_m as matrix [i, j]

    def jt(a, b, cc):
        return dT[:, :, b, cc, a] + np.einsum("bim,bm->bi", T[:, :, a, :], T[:, :, b, cc])

    def jr(a, b, cc):
        Rbc = R[:, :, :, b, cc]
        Ga = G[:, :, a, :]
        return (dR[:, :, :, b, cc, a] + Ga @ Rbc - Rbc @ Ga
                + np.einsum("bijm,bm->bij", R[:, :, :, a, :], T[:, :, b, cc])).reshape(B, -1)

    return np.maximum(_max(_cyclic(jt, n)), _max(_cyclic(jr, n)))


@identity("action_isometry", "the parallel transport action preserves inner products of transported vectors", 1e-9, ("t", "r", "a", "b"))
def _isometry(c: Context):
    S = c.S
    L = S.r @ gd.batch_pi(c.M, S.x, S.t, c.cfg)
    u, w = np.einsum("bij,bj->bi", L, S.a), np.einsum("bij,bj->bi", L, S.b)
    return np.max(np.abs([np.einsum("bi,bi->b", u, w) - np.einsum("bi,bi->b", S.a, S.b),
                          np.einsum("bi,bi->b", u, u) - np.einsum("bi,bi->b", S.a, S.a),
                          np.einsum("bi,bi->b", w, w) - np.einsum("bi,bi->b", S.b, S.b)]), axis=0)


@identity("transport_first_integral", "pi_x(log_x(x')) theta_x' is constant along the geodesic while theta is parallel transported", 1e-7, ("t", "a"))
def _first_integral(c: Context):
    out = np.full(c.B, np.nan)
    _, k = c.frame
    for i in range(c.B):
        try:
            path = gd.geodesic_ivp(c.M, c.S.x[i], k[i] @ c.S.t[i], 1.0, c.cfg)
            out[i] = dp.first_integral_residual(c.M, path, c.S.a[i], c.cfg, stride=32)
        except (RGroupsError, ValueError, ArithmeticError):
            pass
    return out


# ---------------------------------------------------------------- running

@dataclass(frozen=True)
class IdentityReport:
    identity_id: str
    eq_ref: str
    point: list
    params: dict
    residual: float | None
    tolerance: float
    passed: bool
    note: str | None = None

    def to_json(self) -> dict:
        out = {"identity_id": self.identity_id, "eq_ref": self.eq_ref, "point": self.point, "params": self.params,
               "residual": self.residual, "tolerance": self.tolerance, "pass": self.passed}
        if self.note:
            out["note"] = self.note
        return out


@dataclass(frozen=True)
class Aggregate:
    count: int
    max_residual: float | None
    passed: bool
    failures: int
    skipped: int


@dataclass(frozen=True)
class SuiteReport:
    manifold: str
    seed: int
    samples: int
    records: list[IdentityReport]
    aggregates: dict[str, Aggregate]

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.aggregates.values())

    def residuals(self, identity_id: str) -> np.ndarray:
        return np.array([np.nan if r.residual is None else r.residual for r in self.records if r.identity_id == identity_id])


def select(ids=None) -> list[Identity]:
    if ids is None:
        return list(CATALOGUE)
    known = {i.identity_id: i for i in CATALOGUE}
    missing = [i for i in ids if i not in known]
    if missing:
        raise KeyError(f"unknown identities: {', '.join(missing)}")
    return [known[i] for i in ids]


def run_suite(M: Manifold, samples: int = 20, seed: int = 0, cfg: ExpLogConfig = DEFAULT,
              ids=None, tolerances: dict[str, float] | None = None) -> SuiteReport:
    """Evaluate the catalogue at seeded samples; solver failures become failing records with a note."""
    S = draw_samples(M, samples, seed)
    ctx = Context(M, S, cfg)
    tolerances = tolerances or {}
    records: list[IdentityReport] = []
    aggregates: dict[str, Aggregate] = {}
    for ident in select(ids):
        tol = float(tolerances.get(ident.identity_id, ident.tolerance))
        note = None
        with np.errstate(all="ignore"):
            try:
                res = np.asarray(ident.evaluate(ctx), dtype=float)
            except Exception as exc:  # recorded per identity, never fatal for the run
                res = np.full(len(S), np.nan)
                note = f"evaluation failed: {type(exc).__name__}: {exc}"
        skipped = 0
        for i in range(len(S)):
            r = float(res[i])
            ok = math.isfinite(r)
            skipped += not ok
            params = {k: getattr(S, k)[i].tolist() for k in ident.uses}
            records.append(IdentityReport(ident.identity_id, ident.eq_ref, S.x[i].tolist(), params,
                                          r if ok else None, tol, ok and r < tol,
                                          None if ok else (note or "solver failure (domain exit or non-convergent shooting)")))
        finite = res[np.isfinite(res)]
        aggregates[ident.identity_id] = Aggregate(len(S), float(finite.max()) if finite.size else None,
                                                  bool(skipped == 0 and np.all(finite < tol)), int(np.sum(~(finite < tol)) + skipped), skipped)
    return SuiteReport(M.name, seed, samples, records, aggregates)

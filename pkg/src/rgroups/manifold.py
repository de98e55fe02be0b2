"""Metric charts, orthonormal frames, connections and curvature.

Array conventions (``B`` is a batch axis, indices are chart or frame
indices as noted):

* ``g[b, i, j]``, ``dg[b, i, j, k] = d_k g_ij``, ``d2g[b, i, j, k, l]``
* ``h`` maps chart components to frame components, ``k = h^{-1}``;
  ``dk[b, p, a, m] = d_m k_pa``
* ``Gamma[b, i, j, k]`` is the Christoffel symbol with upper index ``i``
* frame tensors: ``gamma[b, i, a, c]`` is component ``i`` of
  ``gamma<e_a, e_c>``; ``curv[b, i, t, a, c]`` is component ``i`` of
  ``R<e_t, e_a, e_c>`` = ``[nabla_a, nabla_c] e_t`` (minus the bracket term)

Single-point functions (``*_at``) validate their input and raise; the
batched helpers prefixed ``batch_`` never raise on domain problems and
propagate NaN instead, which lets identity suites record per-sample
failures.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, MetricError
from . import kernels
from .dsl import MetricSpec, eval_jets, load_metric

JetFn = Callable[[np.ndarray, int], tuple]


@dataclass(frozen=True, eq=False)
class Manifold:
    """An ``n``-dimensional metric chart on an open coordinate box."""

    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    jets: JetFn = field(repr=False)
    flat: bool = False  # geodesics are straight chart lines (Cartesian Euclidean only)
    program: kernels.MetricProgram | None = field(default=None, repr=False)  # drives the compiled flow

    def in_domain(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore"):
            inside = (x > self.lower) & (x < self.upper)
        return np.all(inside, axis=-1) & np.all(np.isfinite(x), axis=-1)

    def check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"{self.name}: expected a point with {self.dim} coordinates, got shape {x.shape}")
        if not self.in_domain(x):
            raise DomainError(f"{self.name}: point {x.tolist()} outside chart domain")
        return x

    def sample_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Compact box, well inside the domain, from which test points are drawn."""
        lo, hi = np.empty(self.dim), np.empty(self.dim)
        for i, (a, b) in enumerate(zip(self.lower, self.upper)):
            if math.isfinite(a) and math.isfinite(b):
                w = b - a
                lo[i], hi[i] = a + 0.2 * w, b - 0.2 * w
            elif math.isfinite(a):
                lo[i], hi[i] = a + 0.5, a + 2.0
            elif math.isfinite(b):
                lo[i], hi[i] = b - 2.0, b - 0.5
            else:
                lo[i], hi[i] = -1.0, 1.0
        return lo, hi


# ---------------------------------------------------------------- built-ins

def _euclidean_jets(n: int) -> JetFn:
    def jets(x, order=2):
        b = x.shape[0]
        g = np.broadcast_to(np.eye(n), (b, n, n)).copy()
        dg = np.zeros((b, n, n, n))
        d2g = np.zeros((b, n, n, n, n)) if order >= 2 else None
        return g, dg, d2g
    return jets


def _sphere_jets(x, order=2):
    theta = x[:, 0]
    b = x.shape[0]
    g = np.zeros((b, 2, 2))
    dg = np.zeros((b, 2, 2, 2))
    g[:, 0, 0] = 1.0
    g[:, 1, 1] = np.sin(theta) ** 2
    dg[:, 1, 1, 0] = np.sin(2.0 * theta)
    d2g = None
    if order >= 2:
        d2g = np.zeros((b, 2, 2, 2, 2))
        d2g[:, 1, 1, 0, 0] = 2.0 * np.cos(2.0 * theta)
    return g, dg, d2g


def _halfplane_jets(x, order=2):
    y = x[:, 1]
    b = x.shape[0]
    g = np.zeros((b, 2, 2))
    dg = np.zeros((b, 2, 2, 2))
    g[:, 0, 0] = g[:, 1, 1] = y**-2
    dg[:, 0, 0, 1] = dg[:, 1, 1, 1] = -2.0 * y**-3
    d2g = None
    if order >= 2:
        d2g = np.zeros((b, 2, 2, 2, 2))
        d2g[:, 0, 0, 1, 1] = d2g[:, 1, 1, 1, 1] = 6.0 * y**-4
    return g, dg, d2g


SPHERE_MARGIN = 0.05

_SPHERE_PROGRAM = kernels.program_from_text(
    "dim 2; coords theta phi; g[0][0] = 1; g[1][0] = 0; g[1][1] = sin(theta)^2;")
_HALFPLANE_PROGRAM = kernels.program_from_text(
    "dim 2; coords x y; g[0][0] = y^-2; g[1][0] = 0; g[1][1] = y^-2;")


def euclidean(n: int) -> Manifold:
    return Manifold(f"euclidean{n}", n, np.full(n, -np.inf), np.full(n, np.inf), _euclidean_jets(n), flat=True)


def sphere() -> Manifold:
    """Unit sphere in the chart (theta, phi), g = diag(1, sin^2 theta)."""
    lower = np.array([SPHERE_MARGIN, -np.pi])
    upper = np.array([np.pi - SPHERE_MARGIN, np.pi])
    return Manifold("sphere", 2, lower, upper, _sphere_jets, program=_SPHERE_PROGRAM)


def halfplane() -> Manifold:
    """Poincare half-plane (x, y), y > 0, g = diag(1/y^2, 1/y^2)."""
    return Manifold("halfplane", 2, np.array([-np.inf, 0.0]), np.array([np.inf, np.inf]), _halfplane_jets,
                    program=_HALFPLANE_PROGRAM)


BUILTIN_NAMES = ("euclidean<n>", "sphere", "halfplane")


def from_spec(spec: MetricSpec, name: str = "custom") -> Manifold:
    lower = np.array([lo for lo, _ in spec.domain])
    upper = np.array([hi for _, hi in spec.domain])
    return Manifold(name, spec.dim, lower, upper, lambda x, order=2: eval_jets(spec, x, order),
                    program=kernels.compile_program(spec))


def resolve(ref: str) -> Manifold:
    """Built-in name (``euclidean<n>``, ``sphere``, ``halfplane``) or a ``.metric`` path."""
    m = re.fullmatch(r"euclidean(\d+)", ref)
    if m and int(m.group(1)) >= 1:
        return euclidean(int(m.group(1)))
    if ref == "sphere":
        return sphere()
    if ref == "halfplane":
        return halfplane()
    if ref.endswith(".metric"):
        return from_spec(load_metric(ref), name=ref)
    raise ValueError(f"unknown manifold {ref!r}; expected one of {', '.join(BUILTIN_NAMES)} or a .metric file")


# ---------------------------------------------------------------- batched kernels

def batch_metric(M: Manifold, x: np.ndarray, order: int = 2):
    """``(g, dg, d2g)`` at rows of ``x``; rows outside the domain come back NaN."""
    ok = M.in_domain(x)
    b, n = x.shape
    g = np.full((b, n, n), np.nan)
    dg = np.full((b, n, n, n), np.nan)
    d2g = np.full((b, n, n, n, n), np.nan) if order >= 2 else None
    if np.any(ok):
        try:
            gg, dd, d2 = M.jets(x[ok], order)
        except DomainError:
            # isolate the offending rows
            for r in np.flatnonzero(ok):
                try:
                    gg, dd, d2 = M.jets(x[r:r + 1], order)
                except DomainError:
                    continue
                g[r], dg[r] = gg[0], dd[0]
                if d2g is not None:
                    d2g[r] = d2[0]
            return g, dg, d2g
        g[ok], dg[ok] = gg, dd
        if d2g is not None:
            d2g[ok] = d2
    return g, dg, d2g


def _cholesky_rows(g: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor per row; NaN rows for non-SPD or NaN input."""
    L = np.full_like(g, np.nan)
    ok = np.all(np.isfinite(g), axis=(1, 2))
    if not np.any(ok):
        return L
    try:
        L[ok] = np.linalg.cholesky(g[ok])
    except np.linalg.LinAlgError:
        for r in np.flatnonzero(ok):
            try:
                L[r] = np.linalg.cholesky(g[r])
            except np.linalg.LinAlgError:
                pass
    return L


def batch_frame(M: Manifold, x: np.ndarray):
    """Frame ``h = L^T`` (g = L L^T) and its inverse ``k`` at rows of ``x``."""
    g, _, _ = batch_metric(M, x, order=1)
    L = _cholesky_rows(g)
    h = np.swapaxes(L, 1, 2)
    with np.errstate(invalid="ignore"):
        k = np.linalg.inv(np.where(np.isfinite(h), h, np.eye(M.dim))) + 0.0 * h
    return h, k


def _cholesky_tangent(L: np.ndarray, dG: np.ndarray) -> np.ndarray:
    """Forward-mode derivative of the Cholesky factor: dL = L Phi(L^-1 dG L^-T)."""
    Linv = np.linalg.inv(L)
    A = Linv @ dG @ np.swapaxes(Linv, -1, -2)
    Phi = np.tril(A)
    idx = np.arange(L.shape[-1])
    Phi[..., idx, idx] *= 0.5
    return L @ Phi


def batch_frame_jet(M: Manifold, x: np.ndarray):
    """``(h, k, dk)`` with ``dk[b, p, a, m] = d_m k_pa``, differentiated through the factorization."""
    g, dg, _ = batch_metric(M, x, order=1)
    b, n = x.shape
    L = _cholesky_rows(g)
    bad = ~np.all(np.isfinite(L), axis=(1, 2))
    Ls = np.where(bad[:, None, None], np.eye(n), L)
    h = np.swapaxes(Ls, 1, 2)
    k = np.linalg.inv(h)
    dk = np.empty((b, n, n, n))
    for m in range(n):
        dG = np.where(bad[:, None, None], 0.0, dg[..., m])
        dh = np.swapaxes(_cholesky_tangent(Ls, dG), 1, 2)
        dk[..., m] = -k @ dh @ k
    h[bad] = k[bad] = np.nan
    dk[bad] = np.nan
    return h, k, dk


def _inv(g: np.ndarray) -> np.ndarray:
    """Batched inverse that lets NaN rows through instead of raising."""
    n = g.shape[-1]
    if n == 1:
        return 1.0 / g
    if n == 2:
        a, b, c, d = g[:, 0, 0], g[:, 0, 1], g[:, 1, 0], g[:, 1, 1]
        det = a * d - b * c
        out = np.empty_like(g)
        out[:, 0, 0], out[:, 0, 1], out[:, 1, 0], out[:, 1, 1] = d / det, -b / det, -c / det, a / det
        return out
    bad = ~np.all(np.isfinite(g), axis=(1, 2))
    out = np.linalg.inv(np.where(bad[:, None, None], np.eye(n), g))
    out[bad] = np.nan
    return out


def _levi_civita(g, dg):
    ginv = _inv(g)
    S = np.swapaxes(dg, 2, 3) + dg - np.transpose(dg, (0, 3, 1, 2))
    # S[b, l, j, k] = d_j g_lk + d_k g_lj - d_l g_jk
    return ginv, S


def batch_christoffel(M: Manifold, x: np.ndarray) -> np.ndarray:
    """``Gamma[b, i, j, k]`` from the Levi-Civita formula (needs first metric derivatives only)."""
    g, dg, _ = batch_metric(M, x, order=1)
    ginv, S = _levi_civita(g, dg)
    Gam = 0.5 * np.einsum("bil,bljk->bijk", ginv, S)
    Gam[~np.all(np.isfinite(g), axis=(1, 2))] = np.nan
    return Gam


def batch_christoffel_jet(M: Manifold, x: np.ndarray):
    """``(Gamma, dGamma)`` with ``dGamma[b, i, j, k, m] = d_m Gamma^i_jk``."""
    g, dg, d2g = batch_metric(M, x, order=2)
    ginv, S = _levi_civita(g, dg)
    Gam = 0.5 * np.einsum("bil,bljk->bijk", ginv, S)
    dginv = -np.einsum("bip,bpqm,bqj->bijm", ginv, dg, ginv)
    # dS[b, l, j, k, m] = d_m S[b, l, j, k]
    dS = np.swapaxes(d2g, 2, 3) + d2g - np.transpose(d2g, (0, 3, 1, 2, 4))
    dGam = 0.5 * (np.einsum("bilm,bljk->bijkm", dginv, S) + np.einsum("bil,bljkm->bijkm", ginv, dS))
    bad = ~np.all(np.isfinite(g), axis=(1, 2))
    Gam[bad] = np.nan
    dGam[bad] = np.nan
    return Gam, dGam


def batch_gamma(M: Manifold, x: np.ndarray) -> np.ndarray:
    """Frame connection ``gamma<l, l'> = h(Gamma(k l, k l') + ((k l).d k) l')``."""
    h, k, dk = batch_frame_jet(M, x)
    Gam = batch_christoffel(M, x)
    coord = np.einsum("bpqr,bqa,brc->bpac", Gam, k, k) + np.einsum("bma,bpcm->bpac", k, dk)
    return np.einsum("bip,bpac->biac", h, coord)


def batch_anholonomy(M: Manifold, x: np.ndarray) -> np.ndarray:
    """Structure operator ``C<l, l'>`` of the frame field: ``k C<l,l'> = (e_l k) l' - (e_l' k) l``."""
    h, k, dk = batch_frame_jet(M, x)
    ek = np.einsum("bma,bpcm->bpac", k, dk)  # (e_a k) e_c in chart components
    return np.einsum("bip,bpac->biac", h, ek - np.swapaxes(ek, 2, 3))


def batch_riemann_coord(M: Manifold, x: np.ndarray) -> np.ndarray:
    """``Rc[b, p, q, c, d]``: chart components of ``R(d_c, d_d) d_q``."""
    Gam, dGam = batch_christoffel_jet(M, x)
    # dGam[b, p, d, q, c] = d_c Gamma^p_dq
    t1 = np.einsum("bpdqc->bpqcd", dGam)
    quad = np.einsum("bpcm,bmdq->bpqcd", Gam, Gam)
    return t1 - np.swapaxes(t1, 3, 4) + quad - np.swapaxes(quad, 3, 4)


def batch_riemann_frame(M: Manifold, x: np.ndarray) -> np.ndarray:
    """Curvature operator in frame components, ``curv[b, i, t, a, c]`` = ``R(e_a, e_c) e_t``."""
    h, k = batch_frame(M, x)
    Rc = batch_riemann_coord(M, x)
    R = np.einsum("bip,bpqcd,bqt,bca,bde->bitae", h, Rc, k, k, k)
    # the contraction order breaks the exact antisymmetry of Rc in the last pair
    return 0.5 * (R - np.swapaxes(R, 3, 4))


# ---------------------------------------------------------------- single point API

def metric_at(M: Manifold, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(g, dg, d2g)`` at ``x``; raises outside the domain or if ``g`` is not SPD."""
    x = M.check_point(x)
    g, dg, d2g = batch_metric(M, x[None, :])
    if not np.all(np.isfinite(g)):
        raise DomainError(f"{M.name}: metric undefined at {x.tolist()}")
    g0 = g[0]
    if not np.allclose(g0, g0.T, rtol=1e-12, atol=1e-14) or np.linalg.eigvalsh(g0)[0] <= 0.0:
        raise MetricError(f"{M.name}: metric not symmetric positive definite at {x.tolist()}")
    return g0, dg[0], d2g[0]


def frame_at(M: Manifold, x) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal frame ``(h, k)``: ``h^T h = g``, ``h`` upper triangular with positive diagonal."""
    metric_at(M, x)
    h, k = batch_frame(M, np.asarray(x, dtype=float)[None, :])
    if not np.all(np.isfinite(h)):
        raise MetricError(f"{M.name}: frame factorization failed at {list(x)}")
    return h[0], k[0]


def christoffel_at(M: Manifold, x) -> np.ndarray:
    metric_at(M, x)
    return batch_christoffel(M, np.asarray(x, dtype=float)[None, :])[0]


def gamma_at(M: Manifold, x) -> np.ndarray:
    frame_at(M, x)
    return batch_gamma(M, np.asarray(x, dtype=float)[None, :])[0]


def anholonomy_at(M: Manifold, x) -> np.ndarray:
    frame_at(M, x)
    return batch_anholonomy(M, np.asarray(x, dtype=float)[None, :])[0]


def riemann_classical_at(M: Manifold, x) -> np.ndarray:
    frame_at(M, x)
    return batch_riemann_frame(M, np.asarray(x, dtype=float)[None, :])[0]


# ---------------------------------------------------------------- contractions

def apply2(T: np.ndarray, a, b) -> np.ndarray:
    """``T<a, b>`` for a frame tensor ``T[..., i, a, b]``."""
    return np.einsum("...iab,...a,...b->...i", T, a, b)


def apply3(T: np.ndarray, a, b, c) -> np.ndarray:
    return np.einsum("...iabc,...a,...b,...c->...i", T, a, b, c)


def sectional_curvature(curv: np.ndarray, a, b) -> np.ndarray:
    """``<R(a, b) b, a> / |a ^ b|^2`` from frame curvature ``curv[..., i, t, a, c]``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    num = np.einsum("...i,...i->...", a, apply3(curv, b, a, b))
    area = np.einsum("...i,...i", a, a) * np.einsum("...i,...i", b, b) - np.einsum("...i,...i", a, b) ** 2
    return num / area

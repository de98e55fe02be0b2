"""Compiled inner loops: a metric bytecode interpreter and the RK4 geodesic flow.

Metric entries are compiled to a small stack program (:class:`MetricProgram`)
that evaluates ``g[i, j]`` together with ``dg[i, j, k] = d_k g_ij`` in forward
mode. Keeping the metric as data rather than as a jitted function lets the
flow kernel be compiled once and cached on disk.
"""

from __future__ import annotations

import math
import os

import numba
import numpy as np
from numba import njit, prange

from dataclasses import dataclass

from .dsl import CONSTANTS, BinOp, Call, Const, MetricSpec, Neg, Num, Pow, Var, parse_metric

_JIT = dict(error_model="numpy", cache=True)

# omp first: the tbb build shipped with some distributions is too old and warns
numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]


def set_threads_from_env() -> int:
    """Honour ``RGROUPS_THREADS`` as a cap on compiled-kernel parallelism."""
    cap = os.environ.get("RGROUPS_THREADS")
    n = numba.config.NUMBA_NUM_THREADS
    if cap:
        n = max(1, min(n, int(cap)))
    numba.set_num_threads(n)
    return n


CONST, VAR, NEG, ADD, SUB, MUL, DIV, POW, SIN, COS, SINH, COSH, EXP, LN, SQRT, STORE = range(16)
_CALLS = {"sin": SIN, "cos": COS, "sinh": SINH, "cosh": COSH, "exp": EXP, "ln": LN, "sqrt": SQRT}
_BINOPS = {"+": ADD, "-": SUB, "*": MUL, "/": DIV}


@dataclass(frozen=True, eq=False)
class MetricProgram:
    """Postfix program: rows ``(opcode, argument)`` plus a constant pool."""

    code: np.ndarray  # (P, 2) int64
    consts: np.ndarray  # (C,) float64
    dim: int


def compile_program(spec: MetricSpec) -> MetricProgram:
    code: list[tuple[int, int]] = []
    consts: list[float] = []
    index = {c: i for i, c in enumerate(spec.coords)}

    def emit(node):
        if isinstance(node, (Num, Const)):
            consts.append(float(node.value) if isinstance(node, Num) else CONSTANTS[node.name])
            code.append((CONST, len(consts) - 1))
        elif isinstance(node, Var):
            code.append((VAR, index[node.name]))
        elif isinstance(node, Neg):
            emit(node.arg)
            code.append((NEG, 0))
        elif isinstance(node, Pow):
            emit(node.base)
            code.append((POW, node.exponent))
        elif isinstance(node, Call):
            emit(node.arg)
            code.append((_CALLS[node.fn], 0))
        elif isinstance(node, BinOp):
            emit(node.left)
            emit(node.right)
            code.append((_BINOPS[node.op], 0))
        else:
            raise TypeError(f"unexpected node {node!r}")

    for (i, j), expr in sorted(spec.entries.items()):
        emit(expr)
        code.append((STORE, i * spec.dim + j))
    return MetricProgram(np.array(code, dtype=np.int64).reshape(-1, 2), np.array(consts, dtype=float), spec.dim)


def program_from_text(text: str) -> MetricProgram:
    return compile_program(parse_metric(text))


@njit(inline="always", **_JIT)
def _run_program(code, consts, x, g, dg, val, grad):
    """Evaluate the metric program at ``x``; ``val``/``grad`` are the stack."""
    n = x.shape[0]
    top = -1
    for pc in range(code.shape[0]):
        op = code[pc, 0]
        arg = code[pc, 1]
        if op == CONST:
            top += 1
            val[top] = consts[arg]
            for k in range(n):
                grad[top, k] = 0.0
        elif op == VAR:
            top += 1
            val[top] = x[arg]
            for k in range(n):
                grad[top, k] = 1.0 if k == arg else 0.0
        elif op == STORE:
            i = arg // n
            j = arg % n
            g[i, j] = val[top]
            g[j, i] = val[top]
            for k in range(n):
                dg[i, j, k] = grad[top, k]
                dg[j, i, k] = grad[top, k]
            top -= 1
        elif op >= ADD and op <= DIV:
            a = val[top - 1]
            b = val[top]
            if op == ADD:
                val[top - 1] = a + b
                for k in range(n):
                    grad[top - 1, k] += grad[top, k]
            elif op == SUB:
                val[top - 1] = a - b
                for k in range(n):
                    grad[top - 1, k] -= grad[top, k]
            elif op == MUL:
                val[top - 1] = a * b
                for k in range(n):
                    grad[top - 1, k] = grad[top - 1, k] * b + a * grad[top, k]
            else:
                q = a / b
                val[top - 1] = q
                for k in range(n):
                    grad[top - 1, k] = (grad[top - 1, k] - q * grad[top, k]) / b
            top -= 1
        else:
            u = val[top]
            if op == NEG:
                f, d = -u, -1.0
            elif op == POW:
                f = u**arg
                d = arg * u ** (arg - 1)
            elif op == SIN:
                f, d = math.sin(u), math.cos(u)
            elif op == COS:
                f, d = math.cos(u), -math.sin(u)
            elif op == SINH:
                f, d = math.sinh(u), math.cosh(u)
            elif op == COSH:
                f, d = math.cosh(u), math.sinh(u)
            elif op == EXP:
                f = math.exp(u) if u < 709.0 else math.inf
                d = f
            elif op == LN:
                f = math.log(u) if u > 0.0 else math.nan
                d = 1.0 / u
            else:
                f = math.sqrt(u) if u >= 0.0 else math.nan
                d = 0.5 / f
            val[top] = f
            for k in range(n):
                grad[top, k] *= d


@njit(**_JIT)
def eval_program(code, consts, x):
    """Batched ``(g, dg)`` from a metric program; a test and debugging helper."""
    B, n = x.shape
    P = code.shape[0]
    g = np.empty((B, n, n))
    dg = np.empty((B, n, n, n))
    val = np.empty(P)
    grad = np.empty((P, n))
    for b in range(B):
        _run_program(code, consts, x[b], g[b], dg[b], val, grad)
    return g, dg


@njit(inline="always", **_JIT)
def _cholesky(g, L):
    n = g.shape[0]
    for j in range(n):
        d = g[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 0.0:
            return False
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            s = g[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return True


@njit(inline="always", **_JIT)
def _solve(L, w):
    # g y = w in place, g = L L^T
    n = L.shape[0]
    for i in range(n):
        s = w[i]
        for k in range(i):
            s -= L[i, k] * w[k]
        w[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = w[i]
        for k in range(i + 1, n):
            s -= L[k, i] * w[k]
        w[i] = s / L[i, i]


@njit(inline="always", **_JIT)
def _lowered(dg, u, w, out):
    # out_l = sum_jk (d_j g_lk + d_k g_lj - d_l g_jk) u_j w_k / 2
    n = u.shape[0]
    for l in range(n):
        s = 0.0
        for j in range(n):
            for k in range(n):
                s += (dg[l, k, j] + dg[l, j, k] - dg[j, k, l]) * u[j] * w[k]
        out[l] = 0.5 * s


@njit(inline="always", **_JIT)
def _deriv(code, consts, x, v, W, g, dg, L, col, tmp, sv, sg, st, dx, dv, dW):
    _run_program(code, consts, x, g, dg, sv, sg)
    n = x.shape[0]
    m = W.shape[1]
    if not _cholesky(g, L):
        for i in range(n):
            dx[st, i] = math.nan
            dv[st, i] = math.nan
        return
    _lowered(dg, v, v, tmp)
    _solve(L, tmp)
    for i in range(n):
        dx[st, i] = v[i]
        dv[st, i] = -tmp[i]
    for c in range(m):
        for i in range(n):
            col[i] = W[i, c]
        _lowered(dg, v, col, tmp)
        _solve(L, tmp)
        for i in range(n):
            dW[st, i, c] = -tmp[i]


@njit(parallel=True, **_JIT)
def rk4_flow(code, consts, x0, v0, W0, steps, lo, hi, record):
    """RK4 over ``s in [0, 1]`` for ``x'' = -Gamma(x', x')`` and ``W' = -Gamma(x', W)``.

    Row ``b`` takes ``steps[b]`` equal steps. Rows that leave the open box
    ``(lo, hi)`` or become non-finite are NaN. With ``record`` (all rows must
    share one step count) the full trajectories are returned as well.
    """
    B, n = x0.shape
    m = W0.shape[2]
    n_steps = steps.max() if B > 0 else 1
    xs = np.empty((B, n))
    vs = np.empty((B, n))
    Ws = np.empty((B, n, m))
    nrec = n_steps + 1 if record else 1
    tx = np.full((nrec, B, n), np.nan)
    tv = np.full((nrec, B, n), np.nan)
    tW = np.full((nrec, B, n, m), np.nan)
    for b in prange(B):
        dt = 1.0 / steps[b]
        g = np.empty((n, n))
        dg = np.empty((n, n, n))
        L = np.zeros((n, n))
        col = np.empty(n)
        tmp = np.empty(n)
        sv = np.empty(code.shape[0])
        sg = np.empty((code.shape[0], n))
        kx = np.empty((4, n))
        kv = np.empty((4, n))
        kW = np.empty((4, n, m))
        xt = np.empty(n)
        vt = np.empty(n)
        Wt = np.empty((n, m))
        x = x0[b].copy()
        v = v0[b].copy()
        W = W0[b].copy()
        alive = True
        for i in range(n):
            if not (x[i] > lo[i] and x[i] < hi[i]) or not math.isfinite(v[i]):
                alive = False
        if record and alive:
            tx[0, b] = x
            tv[0, b] = v
            tW[0, b] = W
        step = 0
        while alive and step < steps[b]:
            _deriv(code, consts, x, v, W, g, dg, L, col, tmp, sv, sg, 0, kx, kv, kW)
            for st in range(1, 4):
                h = 0.5 * dt if st < 3 else dt
                for i in range(n):
                    xt[i] = x[i] + h * kx[st - 1, i]
                    vt[i] = v[i] + h * kv[st - 1, i]
                    for c in range(m):
                        Wt[i, c] = W[i, c] + h * kW[st - 1, i, c]
                _deriv(code, consts, xt, vt, Wt, g, dg, L, col, tmp, sv, sg, st, kx, kv, kW)
            for i in range(n):
                x[i] += dt / 6.0 * (kx[0, i] + 2.0 * kx[1, i] + 2.0 * kx[2, i] + kx[3, i])
                v[i] += dt / 6.0 * (kv[0, i] + 2.0 * kv[1, i] + 2.0 * kv[2, i] + kv[3, i])
                for c in range(m):
                    W[i, c] += dt / 6.0 * (kW[0, i, c] + 2.0 * kW[1, i, c] + 2.0 * kW[2, i, c] + kW[3, i, c])
            for i in range(n):
                if not (x[i] > lo[i] and x[i] < hi[i]) or not math.isfinite(v[i]):
                    alive = False
            step += 1
            if record and alive:
                tx[step, b] = x
                tv[step, b] = v
                tW[step, b] = W
        if alive:
            xs[b] = x
            vs[b] = v
            Ws[b] = W
        else:
            xs[b] = np.nan
            vs[b] = np.nan
            Ws[b] = np.nan
            if record:
                for r in range(nrec):
                    tx[r, b] = np.nan
                    tv[r, b] = np.nan
                    tW[r, b] = np.nan
    return xs, vs, Ws, tx, tv, tW




set_threads_from_env()

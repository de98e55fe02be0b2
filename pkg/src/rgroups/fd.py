"""Central finite-difference stencils on tensor-product grids.

A stencil is a list of integer-multiple offsets along ``k`` directions with
weights, so that ``sum_p w_p f(x + sum_i off[p, i] d_i)`` approximates
``d_1^{o_1} ... d_k^{o_k} f(x)``. Callers turn the offsets into points,
evaluate everything in one batch and contract with the weights.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import product

import numpy as np

# second-order accurate central stencils, offsets in units of h
_CENTRAL = {
    0: ((0.0,), (1.0,)),
    1: ((-1.0, 1.0), (-0.5, 0.5)),
    2: ((-1.0, 0.0, 1.0), (1.0, -2.0, 1.0)),
    3: ((-2.0, -1.0, 1.0, 2.0), (-0.5, 1.0, -1.0, 0.5)),
}


def _tensor(orders: tuple[int, ...], h: float) -> dict[tuple[float, ...], float]:
    out: dict[tuple[float, ...], float] = {}
    scale = h ** -sum(orders)
    rows = [list(zip(*_CENTRAL[o])) for o in orders]
    for combo in product(*rows):
        key = tuple(h * off for off, _ in combo)
        out[key] = out.get(key, 0.0) + scale * float(np.prod([w for _, w in combo]))
    return out


@lru_cache(maxsize=None)
def stencil(orders: tuple[int, ...], h: float, richardson: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Offsets ``(P, k)`` and weights ``(P,)`` for the mixed derivative of the given orders.

    Each Richardson level halves ``h`` and cancels the next even power of the
    step in the error expansion.
    """
    if any(o not in _CENTRAL for o in orders):
        raise ValueError(f"derivative orders must lie in 0..3, got {orders}")
    levels = [_tensor(orders, h / 2**j) for j in range(richardson + 1)]
    # Neville-style elimination of h^2, h^4, ...
    for k in range(1, richardson + 1):
        f = 4.0**k
        levels = [
            {key: (f * fine.get(key, 0.0) - coarse.get(key, 0.0)) / (f - 1.0) for key in set(fine) | set(coarse)}
            for coarse, fine in zip(levels[:-1], levels[1:])
        ]
    table = {key: w for key, w in levels[0].items() if w != 0.0}
    keys = sorted(table)
    offsets = np.array(keys, dtype=float).reshape(len(keys), len(orders))
    weights = np.array([table[k] for k in keys])
    offsets.setflags(write=False)
    weights.setflags(write=False)
    return offsets, weights


def points(dirs: np.ndarray, orders: tuple[int, ...], h: float, richardson: int = 1):
    """Displacements ``(P, D)`` along ``dirs`` (``(k, D)``) and the matching weights."""
    off, w = stencil(tuple(orders), float(h), int(richardson))
    return off @ np.asarray(dirs, dtype=float), w


def derivatives(F, base: np.ndarray, requests, h: float, richardson: int = 1) -> list[np.ndarray]:
    """Evaluate several mixed derivatives of a batched map in one call.

    ``F`` maps ``(N, D)`` parameter rows to ``(N, ...)`` values (NaN allowed),
    ``base`` is ``(B, D)`` and each request is ``(dirs, orders)`` with
    ``dirs`` of shape ``(B, k, D)``. Returns one ``(B, ...)`` array per request.
    """
    base = np.atleast_2d(base)
    B, D = base.shape
    blocks, weights = [], []
    for dirs, orders in requests:
        off, w = stencil(tuple(orders), float(h), int(richardson))
        blocks.append(base[:, None, :] + np.einsum("pk,bkd->bpd", off, np.asarray(dirs, dtype=float)))
        weights.append(w)
    pts = np.concatenate(blocks, axis=1)
    P = pts.shape[1]
    vals = np.asarray(F(pts.reshape(B * P, D)))
    vals = vals.reshape((B, P) + vals.shape[1:])
    out, start = [], 0
    for w in weights:
        out.append(np.tensordot(w, vals[:, start:start + len(w)], axes=(0, 1)))
        start += len(w)
    return out

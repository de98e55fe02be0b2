"""Second-order forward-mode jets over batches of points.

A :class:`Jet2` carries the value, gradient and Hessian of a scalar field
evaluated at ``B`` points of an ``n``-dimensional chart. Arithmetic follows
the chain rule exactly, so derivatives are free of truncation error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Jet2:
    value: np.ndarray  # (B,)
    grad: np.ndarray  # (B, n)
    hess: np.ndarray | None  # (B, n, n); None when only first order is tracked

    @classmethod
    def constant(cls, c: float, batch: int, n: int, order: int = 2) -> "Jet2":
        value = np.full(batch, float(c))
        grad = np.zeros((batch, n))
        hess = np.zeros((batch, n, n)) if order >= 2 else None
        return cls(value, grad, hess)

    @classmethod
    def variable(cls, x: np.ndarray, i: int, order: int = 2) -> "Jet2":
        """Coordinate ``i`` of the points ``x`` (shape ``(B, n)``) as a jet."""
        batch, n = x.shape
        grad = np.zeros((batch, n))
        grad[:, i] = 1.0
        hess = np.zeros((batch, n, n)) if order >= 2 else None
        return cls(x[:, i].astype(float), grad, hess)

    @property
    def order(self) -> int:
        return 1 if self.hess is None else 2

    def _chain(self, f0, f1, f2) -> "Jet2":
        # f(u): value f0, slope f1, curvature f2 (arrays over the batch)
        grad = f1[:, None] * self.grad
        hess = None
        if self.hess is not None:
            hess = (f1[:, None, None] * self.hess
                    + f2[:, None, None] * self.grad[:, :, None] * self.grad[:, None, :])
        return Jet2(f0, grad, hess)

    def __neg__(self) -> "Jet2":
        return Jet2(-self.value, -self.grad, None if self.hess is None else -self.hess)

    def __add__(self, other: "Jet2") -> "Jet2":
        hess = None if self.hess is None else self.hess + other.hess
        return Jet2(self.value + other.value, self.grad + other.grad, hess)

    def __sub__(self, other: "Jet2") -> "Jet2":
        hess = None if self.hess is None else self.hess - other.hess
        return Jet2(self.value - other.value, self.grad - other.grad, hess)

    def __mul__(self, other: "Jet2") -> "Jet2":
        a, b = self, other
        grad = a.value[:, None] * b.grad + b.value[:, None] * a.grad
        hess = None
        if a.hess is not None:
            cross = a.grad[:, :, None] * b.grad[:, None, :]
            hess = (a.value[:, None, None] * b.hess + b.value[:, None, None] * a.hess
                    + cross + np.swapaxes(cross, 1, 2))
        return Jet2(a.value * b.value, grad, hess)

    def reciprocal(self) -> "Jet2":
        u = self.value
        if np.any(u == 0.0):
            raise ZeroDivisionError("division by zero in metric expression")
        return self._chain(1.0 / u, -1.0 / u**2, 2.0 / u**3)

    def __truediv__(self, other: "Jet2") -> "Jet2":
        return self * other.reciprocal()

    def ipow(self, k: int) -> "Jet2":
        """Integer power by exact chain rule (negative ``k`` requires a nonzero base)."""
        if k == 0:
            return Jet2.constant(1.0, len(self.value), self.grad.shape[1], self.order)
        if k == 1:
            return self
        u = self.value
        if k < 0 and np.any(u == 0.0):
            raise ZeroDivisionError("negative power of zero in metric expression")
        return self._chain(u**k, k * u ** (k - 1), k * (k - 1) * u ** (k - 2))

    def sin(self) -> "Jet2":
        s, c = np.sin(self.value), np.cos(self.value)
        return self._chain(s, c, -s)

    def cos(self) -> "Jet2":
        s, c = np.sin(self.value), np.cos(self.value)
        return self._chain(c, -s, -c)

    def sinh(self) -> "Jet2":
        s, c = np.sinh(self.value), np.cosh(self.value)
        return self._chain(s, c, s)

    def cosh(self) -> "Jet2":
        s, c = np.sinh(self.value), np.cosh(self.value)
        return self._chain(c, s, c)

    def exp(self) -> "Jet2":
        e = np.exp(self.value)
        return self._chain(e, e, e)

    def ln(self) -> "Jet2":
        u = self.value
        if np.any(u <= 0.0):
            raise ValueError("ln of a non-positive value in metric expression")
        return self._chain(np.log(u), 1.0 / u, -1.0 / u**2)

    def sqrt(self) -> "Jet2":
        u = self.value
        if np.any(u <= 0.0):
            raise ValueError("sqrt of a non-positive value in metric expression")
        r = np.sqrt(u)
        return self._chain(r, 0.5 / r, -0.25 / (u * r))

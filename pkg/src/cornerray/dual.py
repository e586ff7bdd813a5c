"""Forward-mode dual numbers with vector-valued gradient slots.

A ``Dual`` carries a value and the gradient of that value with respect to a
fixed list of seed directions.  Values may be scalars or numpy arrays, so a
single sweep differentiates an expression at many points at once; gradients
then have shape ``(m,) + value.shape`` for ``m`` seed directions.
Differentiation is exact to roundoff, which is what the metric-derivative
and symbol-derivative contracts require.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Dual", "seed", "value_of", "grad_of", "sin", "cos", "exp", "sqrt"]


class Dual:
    __slots__ = ("val", "grad")

    def __init__(self, val, grad):
        self.val = val
        self.grad = grad

    def __repr__(self):
        return f"Dual({self.val!r}, {self.grad!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.grad + other.grad)
        return Dual(self.val + other, self.grad)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.grad - other.grad)
        return Dual(self.val - other, self.grad)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.grad)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val,
                        self.grad * other.val + other.grad * self.val)
        return Dual(self.val * other, self.grad * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(self.val * inv,
                        (self.grad - self.val * inv * other.grad) * inv)
        return Dual(self.val / other, self.grad / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        v = other * inv
        return Dual(v, -v * inv * self.grad)

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)):
            raise TypeError("dual powers require integer exponents")
        if n == 0:
            return Dual(np.ones_like(self.val * 1.0), self.grad * 0.0)
        v = self.val ** (n - 1)
        return Dual(v * self.val, n * v * self.grad)

    def __neg__(self):
        return Dual(-self.val, -self.grad)

    def __pos__(self):
        return self


def seed(values):
    """Lift a sequence of values to Duals seeded with unit directions.

    ``values[i]`` may be a float or an array of evaluation points; the
    returned Duals share a gradient space of dimension ``len(values)``.
    """
    values = [np.asarray(v, dtype=float) if np.ndim(v) else float(v)
              for v in values]
    m = len(values)
    out = []
    for i, v in enumerate(values):
        shape = (m,) + (np.shape(v) if np.ndim(v) else ())
        g = np.zeros(shape)
        g[i] = 1.0
        out.append(Dual(v, g))
    return out


def value_of(u):
    return u.val if isinstance(u, Dual) else u


def grad_of(u, m=None):
    if isinstance(u, Dual):
        return u.grad
    shape = (m,) + (np.shape(u) if np.ndim(u) else ())
    return np.zeros(shape)


def sin(u):
    if isinstance(u, Dual):
        return Dual(np.sin(u.val), np.cos(u.val) * u.grad)
    return np.sin(u)


def cos(u):
    if isinstance(u, Dual):
        return Dual(np.cos(u.val), -np.sin(u.val) * u.grad)
    return np.cos(u)


def exp(u):
    if isinstance(u, Dual):
        v = np.exp(u.val)
        return Dual(v, v * u.grad)
    return np.exp(u)


def sqrt(u):
    if isinstance(u, Dual):
        v = np.sqrt(u.val)
        return Dual(v, 0.5 / v * u.grad)
    return np.sqrt(u)

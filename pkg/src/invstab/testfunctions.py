"""Test functions with analytic gradients and Hessians.

Each function acts on an ``(n, d)`` array of points and returns values
``(n,)``, gradients ``(n, d)`` and Hessians ``(n, d, d)``.
"""

from typing import Callable, NamedTuple

import numpy as np

__all__ = ["TestFunction", "coordinate", "square", "cube", "product", "sine", "gaussian_bump", "power", "battery"]


class TestFunction(NamedTuple):
    __test__ = False

    name: str
    value: Callable
    grad: Callable
    hess: Callable


def _unit(x, i):
    e = np.zeros(x.shape)
    e[:, i] = 1.0
    return e


def _diag_hess(x, i, h):
    out = np.zeros(x.shape + (x.shape[1],))
    out[:, i, i] = h
    return out


def power(i, k):
    """``x_i ** k`` for integer ``k >= 1``."""
    return TestFunction(
        f"x{i + 1}^{k}" if k > 1 else f"x{i + 1}",
        lambda x: x[:, i] ** k,
        lambda x: _unit(x, i) * (k * x[:, i] ** (k - 1))[:, None],
        lambda x: _diag_hess(x, i, k * (k - 1) * x[:, i] ** (k - 2) if k >= 2 else 0.0),
    )


def coordinate(i):
    return power(i, 1)


def square(i):
    return power(i, 2)


def cube(i):
    return power(i, 3)


def product(i, j):
    def hess(x):
        out = np.zeros(x.shape + (x.shape[1],))
        out[:, i, j] = out[:, j, i] = 1.0
        return out

    def grad(x):
        g = np.zeros(x.shape)
        g[:, i] = x[:, j]
        g[:, j] = x[:, i]
        return g

    return TestFunction(f"x{i + 1}*x{j + 1}", lambda x: x[:, i] * x[:, j], grad, hess)


def sine(i):
    return TestFunction(
        f"sin(x{i + 1})",
        lambda x: np.sin(x[:, i]),
        lambda x: _unit(x, i) * np.cos(x[:, i])[:, None],
        lambda x: _diag_hess(x, i, -np.sin(x[:, i])),
    )


def gaussian_bump():
    def value(x):
        return np.exp(-0.5 * np.sum(x * x, axis=1))

    def grad(x):
        return -x * value(x)[:, None]

    def hess(x):
        d = x.shape[1]
        return (np.einsum("ni,nj->nij", x, x) - np.eye(d)) * value(x)[:, None, None]

    return TestFunction("exp(-|x|^2/2)", value, grad, hess)


def battery(d):
    """Standard battery: x_i, x_i^2, x_i^3, x_i x_j, sin x_i, exp(-|x|^2/2)."""
    fns = []
    for i in range(d):
        fns += [coordinate(i), square(i), cube(i), sine(i)]
    for i in range(d):
        for j in range(i + 1, d):
            fns.append(product(i, j))
    fns.append(gaussian_bump())
    return fns

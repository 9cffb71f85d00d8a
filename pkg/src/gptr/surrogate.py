"""Surrogate models as seen by the subproblem solver and the certification code.

Anything with ``dim``, ``predict(X)`` and ``gradient(X)`` (batched over the
rows of ``X``) is a surrogate; :class:`~gptr.gp.GpModel` qualifies directly.
"""
from __future__ import annotations

from typing import Callable, Optional, Protocol

import numpy as np

from .kernel import _as_points

__all__ = ["Surrogate", "CallableSurrogate", "MismatchSurrogate", "central_difference"]


class Surrogate(Protocol):
    dim: int

    def predict(self, X) -> np.ndarray: ...

    def gradient(self, X) -> np.ndarray: ...


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


class CallableSurrogate:
    """Surrogate built from plain point-wise callables.

    When ``grad`` is omitted the gradient is a central difference of ``f``.
    """

    def __init__(self, f: Callable, grad: Optional[Callable] = None, dim: int = 1, fd_step: float = 1e-6):
        self.f = f
        self.grad = grad
        self.dim = int(dim)
        self.fd_step = fd_step

    def predict(self, X) -> np.ndarray:
        X = _as_points(X, self.dim)
        return np.array([float(self.f(x)) for x in X])

    def gradient(self, X) -> np.ndarray:
        X = _as_points(X, self.dim)
        if self.grad is None:
            return np.array([central_difference(self.f, x, self.fd_step) for x in X]).reshape(X.shape)
        return np.array([np.asarray(self.grad(x), dtype=float) for x in X]).reshape(X.shape)


class MismatchSurrogate:
    """Nominal-model cost plus a GP trained on plant-minus-model residuals."""

    def __init__(self, nominal, gp):
        self.nominal = nominal
        self.gp = gp
        self.dim = gp.dim

    def predict(self, X) -> np.ndarray:
        return self.nominal.predict(X) + self.gp.mean(X)

    def gradient(self, X) -> np.ndarray:
        return self.nominal.gradient(X) + self.gp.mean_grad(X)

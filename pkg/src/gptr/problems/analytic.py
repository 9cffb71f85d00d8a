"""Small analytic test problems with exact gradient oracles."""
from __future__ import annotations

import numpy as np

from .base import ProblemSpec

__all__ = ["quadratic", "rosenbrock", "sine_wave", "analytic_suite", "get_analytic"]


def quadratic(dim: int = 2, noise_std: float = 0.0, weights=None, x0=None) -> ProblemSpec:
    """``f(x) = sum_i w_i x_i**2`` (unit weights by default), minimum 0 at the origin."""
    w = np.ones(dim) if weights is None else np.asarray(weights, dtype=float).reshape(dim)
    if np.any(w <= 0):
        raise ValueError("quadratic weights must be positive")
    return ProblemSpec(
        name="quadratic",
        dim=dim,
        f=lambda x: float(np.sum(w * np.asarray(x) ** 2)),
        grad=lambda x: 2.0 * w * np.asarray(x, dtype=float),
        noise_std=noise_std,
        x0=np.full(dim, 2.0) if x0 is None else np.asarray(x0, dtype=float),
        minimizer=np.zeros(dim),
        f_min=0.0,
        lipschitz_grad_bound=float(2.0 * np.max(w)),
    )


def _rosen(x):
    x = np.asarray(x, dtype=float)
    return float(100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2)


def _rosen_grad(x):
    x = np.asarray(x, dtype=float)
    return np.array(
        [
            -400.0 * x[0] * (x[1] - x[0] ** 2) - 2.0 * (1.0 - x[0]),
            200.0 * (x[1] - x[0] ** 2),
        ]
    )


def rosenbrock(noise_std: float = 0.0, x0=(-1.2, 1.0)) -> ProblemSpec:
    return ProblemSpec(
        name="rosenbrock",
        dim=2,
        f=_rosen,
        grad=_rosen_grad,
        noise_std=noise_std,
        x0=np.asarray(x0, dtype=float),
        minimizer=np.ones(2),
        f_min=0.0,
    )


def sine_wave(noise_std: float = 0.0, x0=(0.5,)) -> ProblemSpec:
    """Multimodal ``f(x) = sin(3x) + 0.1 x**2``; local minima near -0.51, 1.53, -2.52, 3.52."""
    return ProblemSpec(
        name="sine",
        dim=1,
        f=lambda x: float(np.sin(3.0 * x[0]) + 0.1 * x[0] ** 2),
        grad=lambda x: np.array([3.0 * np.cos(3.0 * x[0]) + 0.2 * x[0]]),
        noise_std=noise_std,
        x0=np.asarray(x0, dtype=float),
        lipschitz_grad_bound=9.2,
    )


_FACTORIES = {"quadratic": quadratic, "rosenbrock": rosenbrock, "sine": sine_wave}


def analytic_suite(noise_std: float = 0.0, quadratic_dim: int = 2) -> list[ProblemSpec]:
    return [quadratic(quadratic_dim, noise_std), rosenbrock(noise_std), sine_wave(noise_std)]


def get_analytic(name: str, **kwargs) -> ProblemSpec:
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise KeyError(f"unknown analytic problem {name!r}; choose from {sorted(_FACTORIES)}") from None
    return factory(**kwargs)

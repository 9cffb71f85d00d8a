from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = ["ProblemSpec", "EvaluationError"]


class EvaluationError(RuntimeError):
    """A plant evaluation failed; ``x`` is the offending input."""

    def __init__(self, message: str, x=None):
        super().__init__(message)
        self.x = None if x is None else np.asarray(x, dtype=float).copy()


@dataclass
class ProblemSpec:
    """An objective to minimize, observed through additive Gaussian noise.

    Attributes
    ----------
    name : str
    dim : int
    f : callable
        Exact objective ``x -> float``. For scheduled problems this is the
        objective used before the first batch (e.g. the initial design).
    noise_std : float
        Noise level. Absolute standard deviation when ``noise_model`` is
        ``"absolute"``, fraction of ``|f(x)|`` when it is ``"relative"``.
    grad : callable, optional
        Exact gradient oracle, for tests and accuracy reporting only.
    nominal : Surrogate, optional
        Known-model cost used as the base of a mismatch surrogate.
    schedule : callable, optional
        ``batch_index -> exact objective``, lets the plant change over time.
    bounds : (lower, upper), optional
        Box constraint on admissible inputs.
    """

    name: str
    dim: int
    f: Callable[[np.ndarray], float]
    noise_std: float = 0.0
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    nominal: Optional[object] = None
    schedule: Optional[Callable[[int], Callable[[np.ndarray], float]]] = None
    bounds: Optional[tuple[np.ndarray, np.ndarray]] = None
    noise_model: str = "absolute"
    x0: Optional[np.ndarray] = None
    minimizer: Optional[np.ndarray] = None
    f_min: Optional[float] = None
    lipschitz_grad_bound: Optional[float] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.noise_model not in ("absolute", "relative"):
            raise ValueError(f"unknown noise model {self.noise_model!r}")
        if self.bounds is not None:
            lo, hi = (np.asarray(b, dtype=float).reshape(self.dim) for b in self.bounds)
            if np.any(lo > hi):
                raise ValueError("lower bound exceeds upper bound")
            self.bounds = (lo, hi)

    @property
    def has_oracle(self) -> bool:
        return self.grad is not None

    def objective_at(self, batch: Optional[int] = None) -> Callable[[np.ndarray], float]:
        if batch is None or self.schedule is None:
            return self.f
        return self.schedule(batch)

    def exact(self, x, batch: Optional[int] = None) -> float:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        try:
            value = float(self.objective_at(batch)(x))
        except EvaluationError:
            raise
        except (ArithmeticError, ValueError) as exc:
            raise EvaluationError(f"{self.name}: evaluation failed at {x}: {exc}", x) from exc
        if not np.isfinite(value):
            raise EvaluationError(f"{self.name}: non-finite value at {x}", x)
        return value

    def evaluate(self, x, rng: Optional[np.random.Generator] = None, batch: Optional[int] = None) -> float:
        """One noisy plant measurement ``f(x) + nu``."""
        value = self.exact(x, batch)
        if rng is None or self.noise_std == 0:
            return value
        scale = self.noise_std * (abs(value) if self.noise_model == "relative" else 1.0)
        return value + scale * float(rng.standard_normal())

    def grad_norm(self, x) -> float:
        if self.grad is None:
            raise ValueError(f"{self.name} has no gradient oracle")
        return float(np.linalg.norm(self.grad(np.asarray(x, dtype=float))))

    def with_noise(self, noise_std: float) -> "ProblemSpec":
        from dataclasses import replace

        return replace(self, noise_std=float(noise_std))

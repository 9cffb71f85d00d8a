"""Covariance functions and their derivatives.

Only the squared-exponential kernel with automatic relevance determination
(SE-ARD) is provided,

    c(x_i, x_j) = signal_std**2 * exp(-(x_i - x_j)^T diag(lam) (x_i - x_j) / 2),

where ``lam`` holds the inverse squared lengthscales. Other stationary kernels
can be added by subclassing :class:`Kernel`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "Hyperparams",
    "Kernel",
    "SquaredExponentialARD",
    "SE_ARD",
    "eval_kernel",
    "kernel_grad_x",
    "cov_matrix",
    "cov_vector",
]


@dataclass(frozen=True)
class Hyperparams:
    """Kernel and noise hyperparameters on their natural scale.

    Attributes
    ----------
    signal_std : float
        Signal standard deviation ``sigma_f`` (> 0).
    inv_lengthscales : tuple of float
        Diagonal of ``Lambda``, one inverse squared lengthscale per input (> 0).
    noise_std : float
        Standard deviation of the additive sampling noise (>= 0).
    """

    signal_std: float
    inv_lengthscales: tuple[float, ...]
    noise_std: float = 0.0

    def __post_init__(self):
        lam = tuple(float(v) for v in np.atleast_1d(self.inv_lengthscales))
        object.__setattr__(self, "inv_lengthscales", lam)
        object.__setattr__(self, "signal_std", float(self.signal_std))
        object.__setattr__(self, "noise_std", float(self.noise_std))
        if not (self.signal_std > 0 and math.isfinite(self.signal_std)):
            raise ValueError(f"signal_std must be positive, got {self.signal_std}")
        if len(lam) == 0:
            raise ValueError("inv_lengthscales must not be empty")
        if not all(v > 0 and math.isfinite(v) for v in lam):
            raise ValueError(f"inv_lengthscales must be positive, got {lam}")
        if not (self.noise_std >= 0 and math.isfinite(self.noise_std)):
            raise ValueError(f"noise_std must be nonnegative, got {self.noise_std}")

    @property
    def dim(self) -> int:
        return len(self.inv_lengthscales)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.inv_lengthscales, dtype=float)

    @classmethod
    def isotropic(cls, dim: int, signal_std=1.0, inv_lengthscale=1.0, noise_std=0.0):
        return cls(signal_std, (float(inv_lengthscale),) * dim, noise_std)

    def to_log_vector(self, include_noise: bool = True) -> np.ndarray:
        """Return ``[log sigma_f, log lam_1..n, (log sigma)]``.

        ``noise_std`` must be positive when ``include_noise`` is set.
        """
        parts = [math.log(self.signal_std), *np.log(self.lam)]
        if include_noise:
            parts.append(math.log(self.noise_std))
        return np.array(parts, dtype=float)

    @classmethod
    def from_log_vector(cls, v: Sequence[float], dim: int, noise_std: float | None = None):
        """Inverse of :meth:`to_log_vector`.

        When ``noise_std`` is given it is used verbatim and ``v`` must not
        contain a noise entry.
        """
        v = np.asarray(v, dtype=float)
        expected = dim + 1 + (noise_std is None)
        if v.shape != (expected,):
            raise ValueError(f"log vector has shape {v.shape}, expected ({expected},)")
        noise = math.exp(v[-1]) if noise_std is None else noise_std
        return cls(math.exp(v[0]), tuple(np.exp(v[1 : dim + 1])), noise)

    def to_dict(self) -> dict[str, Any]:
        return {
            "signal_std": self.signal_std,
            "inv_lengthscales": list(self.inv_lengthscales),
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Hyperparams":
        return cls(
            float(d["signal_std"]),
            tuple(float(v) for v in d["inv_lengthscales"]),
            float(d.get("noise_std", 0.0)),
        )


def _as_points(X, dim: int, name: str = "X") -> np.ndarray:
    # extended-precision inputs stay extended; everything else becomes float64
    X = np.asarray(X)
    if X.dtype != np.longdouble:
        X = X.astype(float)
    if X.size == 0:
        return X.reshape(0, dim)
    if X.ndim == 1:
        X = X.reshape(1, -1) if dim > 1 or X.size == 1 else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != dim:
        raise ValueError(f"{name} has shape {X.shape}, expected (*, {dim})")
    return X


def _as_point(x, dim: int, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (dim,):
        raise ValueError(f"{name} has dimension {x.size}, expected {dim}")
    return x


class Kernel:
    """Interface for stationary covariance functions.

    Subclasses implement :meth:`matrix`, :meth:`grad_x` and
    :meth:`log_param_grads`; everything else in the package only relies on
    these three methods.
    """

    name = "abstract"

    def matrix(self, X1: np.ndarray, X2: np.ndarray, theta: Hyperparams) -> np.ndarray:
        raise NotImplementedError

    def grad_x(self, x: np.ndarray, X: np.ndarray, theta: Hyperparams) -> np.ndarray:
        """Gradient of ``c(x, X[i])`` with respect to ``x`` for every row, shape (l, n)."""
        raise NotImplementedError

    def log_param_grads(self, X: np.ndarray, theta: Hyperparams, C: np.ndarray | None = None) -> list[np.ndarray]:
        """Derivatives of the covariance matrix with respect to each log kernel parameter.

        ``C`` may pass in the already computed ``matrix(X, X, theta)``.
        """
        raise NotImplementedError

    def weighted_grad_x(self, Xq: np.ndarray, X: np.ndarray, w: np.ndarray, theta: Hyperparams) -> np.ndarray:
        """``sum_i w[i] * grad_x c(x, X[i])`` for every query row ``x`` of ``Xq``."""
        return np.array([w @ self.grad_x(x, X, theta) for x in Xq]).reshape(len(Xq), theta.dim)

    def diag(self, X: np.ndarray, theta: Hyperparams) -> np.ndarray:
        return np.diag(self.matrix(X, X, theta)).copy()


class SquaredExponentialARD(Kernel):
    name = "se_ard"

    @staticmethod
    def _sqdist(X1, X2, lam):
        # Scaled differences rather than the expanded quadratic form: exact zeros
        # on the diagonal and no cancellation for nearby points.
        s = np.sqrt(lam)
        if X1.dtype == np.float64 and X2.dtype == np.float64:
            return cdist(X1 * s, X2 * s, "sqeuclidean")
        D = X1[:, None, :] * s - X2[None, :, :] * s
        return np.einsum("ijk,ijk->ij", D, D)

    def matrix(self, X1, X2, theta):
        X1 = _as_points(X1, theta.dim, "X1")
        X2 = _as_points(X2, theta.dim, "X2")
        return theta.signal_std**2 * np.exp(-0.5 * self._sqdist(X1, X2, theta.lam))

    def diag(self, X, theta):
        X = _as_points(X, theta.dim)
        return np.full(X.shape[0], theta.signal_std**2)

    def grad_x(self, x, X, theta):
        x = _as_point(x, theta.dim)
        X = _as_points(X, theta.dim)
        diff = x[None, :] - X
        c = theta.signal_std**2 * np.exp(-0.5 * (diff**2 @ theta.lam))
        return -(diff * theta.lam) * c[:, None]

    def weighted_grad_x(self, Xq, X, w, theta):
        Xq = _as_points(Xq, theta.dim, "Xq")
        X = _as_points(X, theta.dim)
        diff = Xq[:, None, :] - X[None, :, :]
        K = theta.signal_std**2 * np.exp(-0.5 * (diff**2 @ theta.lam))
        return -theta.lam * np.einsum("ml,mlk->mk", K * w, diff)

    def log_param_grads(self, X, theta, C=None):
        X = _as_points(X, theta.dim)
        if C is None:
            C = self.matrix(X, X, theta)
        grads = [2.0 * C]
        for d, lam_d in enumerate(theta.inv_lengthscales):
            diff = X[:, None, d] - X[None, :, d]
            grads.append(-0.5 * lam_d * diff**2 * C)
        return grads


SE_ARD = SquaredExponentialARD()


def eval_kernel(x_i, x_j, theta: Hyperparams) -> float:
    """Covariance between two single points."""
    x_i = _as_point(x_i, theta.dim, "x_i")
    x_j = _as_point(x_j, theta.dim, "x_j")
    d = x_i - x_j
    return float(theta.signal_std**2 * math.exp(-0.5 * float(d @ (theta.lam * d))))


def kernel_grad_x(x_i, x_j, theta: Hyperparams) -> np.ndarray:
    """Gradient of ``eval_kernel(x_i, x_j)`` with respect to ``x_i``."""
    x_i = _as_point(x_i, theta.dim, "x_i")
    x_j = _as_point(x_j, theta.dim, "x_j")
    return -theta.lam * (x_i - x_j) * eval_kernel(x_i, x_j, theta)


def cov_matrix(X, theta: Hyperparams, kernel: Kernel = SE_ARD) -> np.ndarray:
    X = _as_points(X, theta.dim)
    if X.shape[0] < 1:
        raise ValueError("cov_matrix needs at least one point")
    return kernel.matrix(X, X, theta)


def cov_vector(x, X, theta: Hyperparams, kernel: Kernel = SE_ARD) -> np.ndarray:
    x = _as_point(x, theta.dim)
    X = _as_points(X, theta.dim)
    return kernel.matrix(x[None, :], X, theta)[0]

"""Gaussian-process regression with a zero prior mean.

The posterior at a query ``x`` given data ``(X, z)`` is

    mean(x) = c(x)^T Q^{-1} z,        var(x) = c(x, x) - c(x)^T Q^{-1} c(x),

with ``Q = C + sigma^2 I``. ``Q`` is factorized once in :func:`fit`; every
query afterwards costs one kernel row plus triangular solves.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import cho_solve, lapack, solve_triangular
from scipy.optimize import minimize
from scipy.special import ndtri
from scipy.stats import qmc

from .kernel import SE_ARD, Hyperparams, Kernel, _as_point, _as_points

__all__ = [
    "Dataset",
    "GpModel",
    "NumericalError",
    "TrainingError",
    "fit",
    "posterior_mean",
    "posterior_var",
    "mean_grad",
    "log_marginal_likelihood",
    "log_marginal_likelihood_and_grad",
    "train",
    "add_point",
    "ball_grid",
    "max_posterior_std_in_ball",
]

_log = logging.getLogger(__name__)

_LOG2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-10
# first jitter step when factorizing in extended precision
JITTER_START_EXT = 1e-18
JITTER_MAX = 1e-4
LOG_START_BOX = (-5.0, 5.0)
LOG_OPT_BOX = (-12.0, 12.0)
EXT = np.longdouble


class NumericalError(ArithmeticError):
    """The covariance system could not be factorized, even with jitter."""


class TrainingError(RuntimeError):
    """No hyperparameter restart produced a finite likelihood."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Append-only set of noisy samples ``(x_i, z_i)``.

    Attributes
    ----------
    inputs : numpy.ndarray, shape (l, n_x)
    outputs : numpy.ndarray, shape (l,)
    """

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        X = np.array(self.inputs, dtype=float)
        z = np.array(self.outputs, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {X.shape}")
        if X.shape[0] != z.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {z.shape[0]} outputs")
        X.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", z)

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(np.empty((0, dim)), np.empty(0))

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[Sequence[float], float]], dim: int | None = None):
        samples = list(samples)
        if not samples:
            if dim is None:
                raise ValueError("dim is required for an empty sample list")
            return cls.empty(dim)
        X = np.array([np.asarray(x, dtype=float).reshape(-1) for x, _ in samples])
        return cls(X, np.array([z for _, z in samples], dtype=float))

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def appended(self, x, z: float) -> "Dataset":
        x = _as_point(x, self.dim)
        return Dataset(np.vstack([self.inputs, x]), np.append(self.outputs, float(z)))

    def with_outputs(self, z) -> "Dataset":
        return Dataset(self.inputs, z)

    def to_csv(self, path) -> None:
        """Write one row per sample with header ``x_1..x_n, z``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(self.dim)] + ["z"])
            for x, z in zip(self.inputs, self.outputs):
                w.writerow([repr(float(v)) for v in x] + [repr(float(z))])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty file")
        header = rows[0]
        dim = len(header) - 1
        expected = [f"x_{i + 1}" for i in range(dim)] + ["z"]
        if dim < 1 or header != expected:
            raise ValueError(f"{path}: bad header {header}, expected {expected}")
        body = [r for r in rows[1:] if r]
        if not body:
            return cls.empty(dim)
        arr = np.array(body, dtype=float)
        return cls(arr[:, :dim], arr[:, dim])


@dataclass(frozen=True, eq=False)
class GpModel:
    """A GP conditioned on a dataset under fixed hyperparameters.

    ``chol`` is the lower Cholesky factor of ``C + (noise_std**2 + jitter) I``
    and ``alpha_weights`` solves that system against the outputs.
    """

    dataset: Dataset
    theta: Hyperparams
    chol: np.ndarray
    alpha_weights: np.ndarray
    jitter: float = 0.0
    kernel: Kernel = field(default=SE_ARD, repr=False)

    @property
    def dim(self) -> int:
        return self.theta.dim

    def __len__(self) -> int:
        return len(self.dataset)

    @cached_property
    def _inputs_ext(self) -> np.ndarray:
        return self.dataset.inputs.astype(EXT)

    def mean(self, X) -> np.ndarray:
        X = _as_points(X, self.dim)
        if len(self.dataset) == 0:
            return np.zeros(X.shape[0])
        Kq = self.kernel.matrix(X.astype(EXT), self._inputs_ext, self.theta)
        return (Kq @ self.alpha_weights).astype(float)

    def var(self, X) -> np.ndarray:
        X = _as_points(X, self.dim)
        prior = self.kernel.diag(X, self.theta)
        if len(self.dataset) == 0:
            return prior
        Kq = self.kernel.matrix(X, self.dataset.inputs, self.theta)
        V = solve_triangular(self.chol.astype(float), Kq.T, lower=True, check_finite=False)
        return np.clip(prior - np.einsum("ij,ij->j", V, V), 0.0, prior)

    def std(self, X) -> np.ndarray:
        return np.sqrt(self.var(X))

    def mean_grad(self, X) -> np.ndarray:
        X = _as_points(X, self.dim)
        if len(self.dataset) == 0:
            return np.zeros_like(X)
        G = self.kernel.weighted_grad_x(X.astype(EXT), self._inputs_ext, self.alpha_weights, self.theta)
        return G.astype(float)

    # surrogate protocol used by the trust-region and certification code
    predict = mean
    gradient = mean_grad

    def reconstruction_error(self) -> float:
        """Relative Frobenius error of ``chol @ chol.T`` against the jittered ``Q``."""
        Q = _q_matrix(self.dataset.inputs.astype(EXT), self.theta, self.kernel) + self.jitter * np.eye(len(self))
        R = (self.chol @ self.chol.T - Q).astype(float)
        return float(np.linalg.norm(R) / np.linalg.norm(Q.astype(float)))


def _q_matrix(X, theta: Hyperparams, kernel: Kernel) -> np.ndarray:
    C = kernel.matrix(X, X, theta)
    C[np.diag_indices_from(C)] += theta.noise_std**2
    return C


def _cholesky_ext(A: np.ndarray) -> np.ndarray:
    """Column Cholesky in the array's own precision; raises LinAlgError if not positive definite."""
    n = A.shape[0]
    L = np.zeros_like(A)
    for j in range(n):
        row = L[j, :j]
        d = A[j, j] - row @ row
        if not d > 0 or not np.isfinite(d):
            raise np.linalg.LinAlgError("not positive definite")
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1 :, j] = (A[j + 1 :, j] - L[j + 1 :, :j] @ row) / L[j, j]
    return L


def _solve_lower_ext(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.zeros_like(b)
    for i in range(L.shape[0]):
        x[i] = (b[i] - L[i, :i] @ x[:i]) / L[i, i]
    return x


def _solve_upper_ext(U: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = U.shape[0]
    x = np.zeros_like(b)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - U[i, i + 1 :] @ x[i + 1 :]) / U[i, i]
    return x


def _factorize(Q: np.ndarray, signal_var: float) -> tuple[np.ndarray, float]:
    """Cholesky with escalating diagonal jitter; returns ``(L, jitter)``.

    Extended-precision input is factorized in extended precision, where the
    jitter ladder starts at ``JITTER_START_EXT`` instead of ``JITTER_START``.
    """
    l = Q.shape[0]
    eye = np.eye(l)
    jitter = 0.0
    extended = Q.dtype == EXT and EXT != np.float64
    chol = _cholesky_ext if extended else np.linalg.cholesky
    start = JITTER_START_EXT if extended else JITTER_START
    while True:
        try:
            L = chol(Q + jitter * eye if jitter else Q)
            if np.all(np.isfinite(L)) and np.min(np.diag(L)) > 0:
                return L, jitter
        except np.linalg.LinAlgError:
            pass
        jitter = start * signal_var if jitter == 0.0 else jitter * 10.0
        if jitter > JITTER_MAX * signal_var * (1 + 1e-9):
            raise NumericalError(
                f"covariance matrix of {l} points is numerically singular "
                f"(jitter up to {JITTER_MAX:g} * signal_var failed)"
            )


def fit(data: Dataset, theta: Hyperparams, kernel: Kernel = SE_ARD) -> GpModel:
    """Condition the GP on ``data``.

    Raises
    ------
    NumericalError
        If ``Q`` stays numerically singular after the maximum jitter.
    """
    if data.dim != theta.dim:
        raise ValueError(f"dataset has dimension {data.dim}, hyperparameters {theta.dim}")
    l = len(data)
    if l == 0:
        return GpModel(data, theta, np.empty((0, 0)), np.empty(0), 0.0, kernel)
    # Long lengthscales next to tightly clustered points leave Q close to
    # singular in double precision, so the posterior is solved in extended
    # precision where the platform has it.
    Q = _q_matrix(data.inputs.astype(EXT), theta, kernel)
    L, jitter = _factorize(Q, theta.signal_std**2)
    if EXT == np.float64:
        w = solve_triangular(L, data.outputs, lower=True, check_finite=False)
        alpha = solve_triangular(L.T, w, lower=False, check_finite=False)
    else:
        alpha = _solve_upper_ext(L.T, _solve_lower_ext(L, data.outputs.astype(EXT)))
    return GpModel(data, theta, L, alpha, jitter, kernel)


def posterior_mean(model: GpModel, x) -> float:
    return float(model.mean(_as_point(x, model.dim))[0])


def posterior_var(model: GpModel, x) -> float:
    return float(model.var(_as_point(x, model.dim))[0])


def mean_grad(model: GpModel, x) -> np.ndarray:
    return model.mean_grad(_as_point(x, model.dim))[0]


def log_marginal_likelihood_and_grad(
    theta: Hyperparams,
    data: Dataset,
    kernel: Kernel = SE_ARD,
    include_noise: bool = True,
) -> tuple[float, np.ndarray]:
    """Log-marginal likelihood and its gradient with respect to the log hyperparameters.

    The gradient is ordered as :meth:`Hyperparams.to_log_vector`; the noise
    entry is present only when ``include_noise`` is set.
    """
    X, z = data.inputs, data.outputs
    l = len(data)
    if l < 1:
        raise ValueError("log marginal likelihood needs at least one sample")
    C = kernel.matrix(X, X, theta)
    Q = C.copy()
    Q[np.diag_indices_from(Q)] += theta.noise_std**2
    L, jitter = _factorize(Q, theta.signal_std**2)
    alpha = cho_solve((L, True), z, check_finite=False)
    value = -0.5 * float(z @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * l * _LOG2PI

    Qinv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NumericalError(f"inverting the covariance factor failed (LAPACK info {info})")
    # dpotri fills the lower triangle; the factor's upper triangle is zero
    Qinv += np.tril(Qinv, -1).T
    W = np.outer(alpha, alpha) - Qinv
    grad = [0.5 * float(np.sum(W * dQ)) for dQ in kernel.log_param_grads(X, theta, C)]
    if include_noise:
        grad.append(theta.noise_std**2 * float(np.trace(W)))
    grad = np.array(grad)
    return value, grad


def log_marginal_likelihood(theta: Hyperparams, data: Dataset, kernel: Kernel = SE_ARD) -> float:
    """``-z^T Q^{-1} z / 2 - log|Q| / 2 - (l / 2) log(2 pi)`` via the Cholesky factor."""
    X, z = data.inputs, data.outputs
    if len(data) < 1:
        raise ValueError("log marginal likelihood needs at least one sample")
    L, _ = _factorize(_q_matrix(X, theta, kernel), theta.signal_std**2)
    w = solve_triangular(L, z, lower=True, check_finite=False)
    return -0.5 * float(w @ w) - float(np.sum(np.log(np.diag(L)))) - 0.5 * len(data) * _LOG2PI


def _log_scale_offset(data: Dataset, include_noise: bool) -> np.ndarray:
    """Log hyperparameters of a unit-scale model: ``sigma_f = rms(z)``, ``lam_d = 1 / var(x_d)``."""
    rms = float(np.sqrt(np.mean(data.outputs**2)))
    spread = np.std(data.inputs, axis=0)
    log_rms = math.log(rms) if rms > 0 else 0.0
    log_lam = np.where(spread > 0, -2.0 * np.log(np.where(spread > 0, spread, 1.0)), 0.0)
    parts = [log_rms, *log_lam] + ([log_rms] if include_noise else [])
    return np.array(parts, dtype=float)


def train(
    data: Dataset,
    restarts: int = 5,
    seed: int = 0,
    *,
    init: Sequence[Hyperparams] = (),
    noise_std: float | None = None,
    min_noise_std: float = 1e-6,
    max_signal_std: float | None = None,
    kernel: Kernel = SE_ARD,
    maxiter: int = 200,
) -> Hyperparams:
    """Maximize the log-marginal likelihood by multi-start L-BFGS-B in log space.

    Parameters
    ----------
    data : Dataset
        At least two samples.
    restarts : int
        Number of random starts, drawn uniformly from ``[-5, 5]`` per log
        hyperparameter around the data scale (output RMS for the signal and
        noise levels, inverse input variance for each ``lam_d``) with a
        generator seeded by ``seed``.
    init : sequence of Hyperparams
        Additional starting points (e.g. the previous estimate). The result is
        never worse than any of them.
    noise_std : float, optional
        Keep the noise level fixed at this value. When omitted it is learned,
        bounded below by ``min_noise_std``.
    """
    if len(data) < 2:
        raise ValueError("training needs at least two samples")
    if restarts < 1 and not init:
        raise ValueError("restarts must be positive")
    dim = data.dim
    learn_noise = noise_std is None
    n_par = dim + 1 + learn_noise
    # Work relative to the data: the start box and the outer bounds are in
    # units of the output RMS and the per-axis input spread.
    offset = _log_scale_offset(data, learn_noise)
    lo, hi = LOG_OPT_BOX
    bounds = [(lo + o, hi + o) for o in offset]
    if max_signal_std is not None:
        bounds[0] = (bounds[0][0], min(bounds[0][1], math.log(max_signal_std)))
    if learn_noise:
        bounds[-1] = (max(bounds[-1][0], math.log(min_noise_std)), max(bounds[-1][1], math.log(min_noise_std)))

    def unpack(v):
        return Hyperparams.from_log_vector(v, dim, None if learn_noise else noise_std)

    def objective(v):
        try:
            val, g = log_marginal_likelihood_and_grad(unpack(v), data, kernel, include_noise=learn_noise)
        except (NumericalError, ValueError):
            return 1e30, np.zeros_like(v)
        if not math.isfinite(val) or not np.all(np.isfinite(g)):
            return 1e30, np.zeros_like(v)
        return -val, -g

    rng = np.random.default_rng(seed)
    starts = []
    for th in init:
        if th.dim != dim:
            raise ValueError("init hyperparameters have the wrong dimension")
        if learn_noise:
            th = Hyperparams(th.signal_std, th.inv_lengthscales, max(th.noise_std, min_noise_std))
        starts.append(th.to_log_vector(include_noise=learn_noise))
    box_lo, box_hi = LOG_START_BOX
    for _ in range(restarts):
        starts.append(offset + rng.uniform(box_lo, box_hi, size=n_par))

    blo, bhi = np.array(bounds).T
    best_v, best_f = None, math.inf
    for v0 in starts:
        v0 = np.clip(v0, blo, bhi)
        f0 = objective(v0)[0]
        if f0 < best_f:
            best_v, best_f = v0, f0
        res = minimize(objective, v0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
        if math.isfinite(res.fun) and res.fun < best_f:
            best_v, best_f = np.asarray(res.x, dtype=float), float(res.fun)
    if best_v is None or best_f >= 1e30:
        raise TrainingError(f"no finite likelihood over {len(starts)} starts")
    theta = unpack(best_v)
    _log.debug("trained %s, log-likelihood %.6g", theta, -best_f)
    return theta


def add_point(data: Dataset, x, z: float, min_dist: float = 0.0) -> tuple[Dataset, bool]:
    """Append ``(x, z)`` unless an existing input is closer than ``min_dist``.

    Returns the (possibly unchanged) dataset and whether the point was added.
    """
    x = _as_point(x, data.dim)
    if len(data) and min_dist > 0:
        nearest = float(np.min(np.linalg.norm(data.inputs - x, axis=1)))
        if nearest < min_dist:
            return data, False
    return data.appended(x, z), True


@lru_cache(maxsize=64)
def _unit_ball_sequence(dim: int, n: int) -> np.ndarray:
    pts = [np.zeros(dim)]
    for i in range(dim):
        for sgn in (-1.0, 1.0):
            e = np.zeros(dim)
            e[i] = sgn
            pts.append(e)
    rest = n - len(pts)
    if rest > 0:
        if dim == 1:
            u = qmc.Halton(1, scramble=False).random(rest + 1)[1:, 0]
            extra = (2.0 * u - 1.0)[:, None]
        else:
            u = qmc.Halton(dim + 1, scramble=False).random(rest + 1)[1:]
            g = ndtri(u[:, :dim])
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            extra = g * u[:, dim:] ** (1.0 / dim)
        pts.extend(extra)
    out = np.array(pts[:n])
    out.setflags(write=False)
    return out


def ball_grid(center, radius: float, n: int = 256) -> np.ndarray:
    """Deterministic low-discrepancy points in the closed ball ``B(center; radius)``.

    The sequence starts with the center and the ``2 n_x`` axis points on the
    boundary, followed by a Halton sequence mapped into the ball. The first
    ``n`` points of a longer grid equal the grid of size ``n``.
    """
    c = np.asarray(center, dtype=float).reshape(-1)
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if n < 1:
        raise ValueError("grid size must be positive")
    return c + radius * _unit_ball_sequence(c.size, int(n))


def max_posterior_std_in_ball(model: GpModel, center, radius: float, grid: int = 256) -> float:
    """Largest posterior standard deviation over :func:`ball_grid` points."""
    pts = ball_grid(_as_point(center, model.dim), radius, grid)
    return float(np.max(model.std(pts)))

"""Local polynomial surrogates rebuilt from fresh plant samples in every trust region.

These are the comparison arm for the GP surrogate: a linear interpolation
model on ``n + 1`` points and a least-squares quadratic on a modest
oversampling of the quadratic coefficient count. Every rebuild spends plant
evaluations, and the counts show up in the trace.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .gp import Dataset
from .problems.base import EvaluationError, ProblemSpec
from .trust_region import (
    IterationRecord,
    RunError,
    RunResult,
    TrConfig,
    TrustRegionState,
    estimate_rho,
    model_decrement_test,
    solve_subproblem,
    update_state,
)

__all__ = [
    "LocalModel",
    "PoisednessError",
    "n_coefficients",
    "n_samples",
    "local_design",
    "build_local",
    "run_local_tr",
]

MAX_COND = 1e8
MAX_REDRAWS = 10
OVERSAMPLING = 1.2


class PoisednessError(RuntimeError):
    """The sample set stayed ill-conditioned after the allowed redraws."""


@dataclass(frozen=True)
class LocalModel:
    """``m(x) = c + g.(x - center) + 0.5 (x - center)' H (x - center)``.

    ``n_evals`` is the number of plant evaluations spent building the model
    and ``samples`` holds them as ``(x, z)`` pairs.
    """

    kind: str
    intercept: float
    gradient_vector: np.ndarray
    center: np.ndarray
    radius: float
    hessian: Optional[np.ndarray] = None
    n_evals: int = 0
    samples: tuple = ()

    @property
    def dim(self) -> int:
        return self.center.size

    def predict(self, X) -> np.ndarray:
        D = np.atleast_2d(np.asarray(X, dtype=float)) - self.center
        out = self.intercept + D @ self.gradient_vector
        if self.hessian is not None:
            out = out + 0.5 * np.einsum("ij,jk,ik->i", D, self.hessian, D)
        return out

    def gradient(self, X) -> np.ndarray:
        D = np.atleast_2d(np.asarray(X, dtype=float)) - self.center
        G = np.broadcast_to(self.gradient_vector, D.shape).copy()
        if self.hessian is not None:
            G += D @ self.hessian
        return G

    def coefficients(self) -> np.ndarray:
        """Independent coefficients: intercept, gradient, upper-triangular Hessian."""
        parts = [np.array([self.intercept]), self.gradient_vector]
        if self.hessian is not None:
            parts.append(self.hessian[np.triu_indices(self.dim)])
        return np.concatenate(parts)


def n_coefficients(kind: str, dim: int) -> int:
    if kind == "linear":
        return dim + 1
    if kind == "quadratic":
        return 1 + dim + dim * (dim + 1) // 2
    raise ValueError(f"unknown local model kind {kind!r}")


def n_samples(kind: str, dim: int) -> int:
    """Plant evaluations per rebuild."""
    p = n_coefficients(kind, dim)
    return p if kind == "linear" else math.ceil(OVERSAMPLING * p)


def _basis(U: np.ndarray, kind: str) -> np.ndarray:
    """Design matrix on scaled displacements; quadratic terms use ``u_i u_j`` (``u_i**2 / 2`` on the diagonal)."""
    cols = [np.ones(len(U)), *U.T]
    if kind == "quadratic":
        n = U.shape[1]
        for i in range(n):
            for j in range(i, n):
                cols.append(0.5 * U[:, i] ** 2 if i == j else U[:, i] * U[:, j])
    return np.column_stack(cols)


def _axis_signs(center, delta, bounds):
    """+1 per coordinate unless the forward point leaves the box and the backward one fits."""
    n = center.size
    if bounds is None:
        return np.ones(n)
    lo, hi = bounds
    return np.where((center + delta > hi) & (center - delta >= lo), -1.0, 1.0)


def local_design(kind: str, center, delta: float, rng: np.random.Generator, bounds=None) -> np.ndarray:
    """Sample points for one rebuild; the first row is the center.

    Linear: the center and one scaled coordinate step per axis. Quadratic:
    the center, both coordinate steps per axis, then uniform ball samples,
    redrawn while the design matrix condition number exceeds ``1e8``.
    """
    center = np.asarray(center, dtype=float).reshape(-1)
    n = center.size
    if not delta > 0:
        raise ValueError("delta must be positive")
    need = n_samples(kind, n)
    signs = _axis_signs(center, delta, bounds)
    if kind == "linear":
        U = np.vstack([np.zeros(n), np.diag(signs)])
    else:
        U = np.vstack([np.zeros(n), np.eye(n), -np.eye(n)])
    for _ in range(MAX_REDRAWS + 1):
        extra = need - len(U)
        if extra > 0:
            g = rng.standard_normal((extra, n))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            V = np.vstack([U, g * rng.uniform(size=(extra, 1)) ** (1.0 / n)])
        else:
            V = U[:need]
        X = center + delta * V
        if bounds is not None:
            X = np.clip(X, *bounds)
        if np.linalg.cond(_basis((X - center) / delta, kind)) <= MAX_COND:
            return X
        if extra <= 0:
            break
    raise PoisednessError(f"{kind} design around {center} with radius {delta:g} stayed ill-conditioned")


def build_local(
    kind: str,
    plant: ProblemSpec,
    center,
    delta: float,
    rng: np.random.Generator,
    *,
    noise_rng: Optional[np.random.Generator] = None,
    batch: Optional[int] = None,
) -> LocalModel:
    """Sample the plant on a fresh poised design and fit a local model.

    ``rng`` drives the design; plant noise comes from ``noise_rng`` (``rng``
    when omitted). Linear models interpolate, quadratic ones are least-squares
    fits.
    """
    center = np.asarray(center, dtype=float).reshape(plant.dim)
    X = local_design(kind, center, delta, rng, plant.bounds)
    noise_rng = rng if noise_rng is None else noise_rng
    z = np.array([plant.evaluate(x, noise_rng, batch) for x in X])
    A = _basis((X - center) / delta, kind)
    coef = np.linalg.lstsq(A, z, rcond=None)[0]
    n = plant.dim
    g = coef[1 : n + 1] / delta
    H = None
    if kind == "quadratic":
        H = np.zeros((n, n))
        H[np.triu_indices(n)] = coef[n + 1 :]
        H = (H + H.T - np.diag(np.diag(H))) / delta**2
    samples = tuple((x.copy(), float(v)) for x, v in zip(X, z))
    return LocalModel(kind, float(coef[0]), g, center, float(delta), H, len(X), samples)


def run_local_tr(
    problem: ProblemSpec,
    config: TrConfig,
    kind: str = "linear",
    x0=None,
    seed: int = 0,
    *,
    callback=None,
) -> RunResult:
    """The trust-region loop with a local model rebuilt at every iteration.

    Trace rows count rebuild evaluations plus the two ratio-test measurements
    in ``plant_evals_used``; there is no separate initial design.
    """
    x0 = problem.x0 if x0 is None else x0
    if x0 is None:
        raise ValueError("no starting point given")
    n_coefficients(kind, problem.dim)
    x = np.asarray(x0, dtype=float).reshape(problem.dim)
    noise_rng = np.random.default_rng([seed, 1])
    state = TrustRegionState(x=x, delta=float(config.delta0))
    X_all, z_all = [], []
    trace: list[IterationRecord] = []
    plant_value = math.nan
    try:
        while state.k < config.max_iters and state.delta >= config.stop_radius:
            k = state.k
            model = build_local(
                kind, problem, state.x, state.delta, np.random.default_rng([seed, 4, k]),
                noise_rng=noise_rng, batch=k + 1,
            )
            for xi, zi in model.samples:
                X_all.append(xi)
                z_all.append(zi)
            if math.isnan(plant_value):
                plant_value = model.samples[0][1]
            s = solve_subproblem(
                model, state.x, state.delta, config.subproblem_starts,
                np.random.default_rng([seed, 2, k]), bounds=problem.bounds, max_iters=config.subproblem_iters,
            )
            m0, ms = model.predict(np.vstack([state.x, state.x + s]))
            decrement = float(m0 - ms)
            if not model_decrement_test(m0, ms, state.delta, config.beta_dec):
                rec = IterationRecord(k, state.x.copy(), state.delta, s, decrement, None, False, model.n_evals, plant_value)
            else:
                est = estimate_rho(problem, model, state.x, s, config.rho_avg, noise_rng, batch=k + 1)
                for xi, zi in est.samples:
                    X_all.append(xi)
                    z_all.append(zi)
                accepted = est.rho >= config.eta
                plant_value = est.fs if accepted else est.f0
                rec = IterationRecord(
                    k, state.x.copy(), state.delta, s, decrement, float(est.rho), bool(accepted),
                    model.n_evals + len(est.samples), plant_value,
                )
            trace.append(rec)
            state = update_state(state, rec.rho, config, s)
            state.trace = trace
            state.model = model
            if callback:
                callback(rec, state)
    except (EvaluationError, ArithmeticError, RuntimeError) as exc:
        raise RunError(f"local {kind} run failed at iteration {state.k}: {exc}", trace, exc) from exc

    data = Dataset(np.array(X_all).reshape(-1, problem.dim), np.array(z_all))
    grad_norm = problem.grad_norm(state.x) if problem.has_oracle else None
    return RunResult(trace, state.x.copy(), state.delta, data, None, 0, config, grad_norm)

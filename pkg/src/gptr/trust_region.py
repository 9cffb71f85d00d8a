"""Probabilistic derivative-free trust-region method with a GP surrogate.

Each iteration minimizes the surrogate over the trust region, skips the plant
when the predicted decrease is below ``beta_dec * min(Delta, Delta**2)``, and
otherwise measures the plant at the current point and the trial point to form
the ratio of actual to predicted decrease. A ratio of at least ``eta``
accepts the step and inflates the radius by ``gamma_inc``; anything else
deflates it by ``gamma_dec``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .certification import alpha_lower_bound
from .gp import Dataset, GpModel, add_point, fit, train
from .kernel import Hyperparams
from .problems.base import EvaluationError, ProblemSpec
from .surrogate import MismatchSurrogate

__all__ = [
    "TrConfig",
    "IterationRecord",
    "TrustRegionState",
    "RhoEstimate",
    "RunResult",
    "RunError",
    "project_ball_box",
    "solve_subproblem",
    "model_decrement_test",
    "estimate_rho",
    "update_state",
    "initial_design",
    "run",
    "write_trace_csv",
]

_log = logging.getLogger(__name__)

# backtracking halvings per projected-gradient step before a start is retired
LINE_SEARCH_TRIES = 20


@dataclass(frozen=True)
class TrConfig:
    """Algorithm constants and implementation knobs.

    ``gamma_inc``, ``gamma_dec``, ``eta`` and ``delta0`` default to the values
    used for the reactor study; ``beta_dec`` is the decrement constant of the
    model-decrement test and must exceed ``eta``.
    """

    gamma_inc: float = 3.0
    gamma_dec: float = 0.9
    eta: float = 0.5
    beta_dec: float = 0.6
    delta0: float = 3.5
    max_iters: int = 200
    delta_min: Optional[float] = None
    rho_avg: int = 1
    min_dist_factor: float = 0.01
    surrogate_mode: str = "direct"
    retrain_every: int = 1
    train_restarts: int = 3
    gp_noise: str = "auto"
    gp_min_noise: float = 1e-6
    signal_cap: Optional[float] = None
    subproblem_starts: int = 8
    subproblem_iters: int = 200
    n_init: Optional[int] = None
    init_radius: Optional[float] = None

    def __post_init__(self):
        errors = self.validation_errors()
        if errors:
            raise ValueError("invalid TrConfig: " + "; ".join(errors))

    def validation_errors(self) -> list[str]:
        e = []
        if not 0 < self.gamma_dec < 1:
            e.append(f"gamma_dec={self.gamma_dec} must lie in (0, 1)")
        if not self.gamma_inc > 1:
            e.append(f"gamma_inc={self.gamma_inc} must exceed 1")
        if not 0 < self.eta < self.beta_dec < 1:
            e.append(f"need 0 < eta < beta_dec < 1, got eta={self.eta}, beta_dec={self.beta_dec}")
        if not self.delta0 > 0:
            e.append(f"delta0={self.delta0} must be positive")
        if self.max_iters < 1:
            e.append("max_iters must be positive")
        if self.delta_min is not None and not self.delta_min > 0:
            e.append("delta_min must be positive")
        if self.rho_avg < 1:
            e.append("rho_avg must be positive")
        if self.min_dist_factor < 0:
            e.append("min_dist_factor must be nonnegative")
        if self.surrogate_mode not in ("direct", "mismatch"):
            e.append(f"surrogate_mode={self.surrogate_mode!r} must be 'direct' or 'mismatch'")
        if self.retrain_every < 1:
            e.append("retrain_every must be positive")
        if self.train_restarts < 0:
            e.append("train_restarts must be nonnegative")
        if self.gp_noise not in ("auto", "known", "learn"):
            e.append(f"gp_noise={self.gp_noise!r} must be 'auto', 'known' or 'learn'")
        if self.subproblem_starts < 1 or self.subproblem_iters < 1:
            e.append("subproblem_starts and subproblem_iters must be positive")
        if self.n_init is not None and self.n_init < 2:
            e.append("n_init must be at least 2")
        return e

    @property
    def stop_radius(self) -> float:
        return 1e-6 * self.delta0 if self.delta_min is None else self.delta_min

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def analytic(cls, **overrides) -> "TrConfig":
        """Constants tuned for the noiseless analytic suite.

        The reactor defaults take long steps and demand a large predicted
        decrease, which suits a few expensive batches but stalls on narrow
        valleys such as Rosenbrock's. These keep the radius moving in smaller
        factors and stop once it falls below ``1e-5``.
        """
        base = dict(
            gamma_inc=2.0, gamma_dec=0.8, eta=0.1, beta_dec=0.2, delta0=1.0,
            delta_min=1e-5, train_restarts=3, retrain_every=3,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d) -> "TrConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class IterationRecord:
    k: int
    x: np.ndarray
    delta: float
    step: Optional[np.ndarray]
    model_decrement: float
    rho: Optional[float]
    accepted: bool
    plant_evals_used: int
    plant_value_estimate: float


@dataclass
class TrustRegionState:
    x: np.ndarray
    delta: float
    k: int = 0
    model: object = None
    data: Optional[Dataset] = None
    theta: Optional[Hyperparams] = None
    trace: list = field(default_factory=list)
    plant_value: float = math.nan


class RhoEstimate(NamedTuple):
    rho: float
    f0: float
    fs: float
    samples: list


class RunError(RuntimeError):
    """A run failed; ``trace`` holds the iterations completed before the failure."""

    def __init__(self, message, trace, cause=None):
        super().__init__(message)
        self.trace = trace
        self.cause = cause


@dataclass
class RunResult:
    trace: list
    x_final: np.ndarray
    delta_final: float
    data: Dataset
    theta: Optional[Hyperparams]
    initial_evals: int
    config: TrConfig
    oracle_grad_norm: Optional[float] = None

    @property
    def total_plant_evals(self) -> int:
        return self.initial_evals + sum(r.plant_evals_used for r in self.trace)

    @property
    def best_plant_estimate(self) -> float:
        vals = [r.plant_value_estimate for r in self.trace if math.isfinite(r.plant_value_estimate)]
        return min(vals) if vals else math.nan

    def evals_to_reach(self, problem: ProblemSpec, tol: float = 1e-2) -> Optional[int]:
        """Plant evaluations spent before the iterate first has oracle gradient norm below ``tol``."""
        used = self.initial_evals
        for r in self.trace:
            if problem.grad_norm(r.x) < tol:
                return used
            used += r.plant_evals_used
        return used if problem.grad_norm(self.x_final) < tol else None

    def summary(self) -> dict:
        c = self.config
        out = {
            "iterations": len(self.trace),
            "final_x": [float(v) for v in self.x_final],
            "final_delta": float(self.delta_final),
            "best_plant_estimate": float(self.best_plant_estimate),
            "initial_evals": int(self.initial_evals),
            "total_plant_evals": int(self.total_plant_evals),
            "accepted_steps": int(sum(r.accepted for r in self.trace)),
            "gamma_inc": c.gamma_inc,
            "gamma_dec": c.gamma_dec,
            "alpha_lower_bound": alpha_lower_bound(c.gamma_inc, c.gamma_dec),
            "hyperparams": None if self.theta is None else self.theta.to_dict(),
        }
        if self.oracle_grad_norm is not None:
            out["final_grad_norm"] = float(self.oracle_grad_norm)
        return out


def project_ball_box(S: np.ndarray, radius: float, lo=None, hi=None) -> np.ndarray:
    """Euclidean projection of displacement rows onto ``{||s|| <= radius} & [lo, hi]``.

    The box is in displacement coordinates and must contain the origin. The
    box part is solved exactly through the multiplier of the ball constraint
    (``s = clip(y / (1 + lam), lo, hi)``, bisection on ``lam``).
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if lo is None:
        norms = np.linalg.norm(S, axis=1, keepdims=True)
        scale = np.where(norms > radius, radius / np.where(norms > 0, norms, 1.0), 1.0)
        return S * scale
    out = np.clip(S, lo, hi)
    for r in range(S.shape[0]):
        if np.linalg.norm(out[r]) <= radius:
            continue
        y = S[r]
        a, b = 0.0, 1.0
        while np.linalg.norm(np.clip(y / (1.0 + b), lo, hi)) > radius:
            b *= 2.0
        for _ in range(100):
            m = 0.5 * (a + b)
            if np.linalg.norm(np.clip(y / (1.0 + m), lo, hi)) > radius:
                a = m
            else:
                b = m
        p = np.clip(y / (1.0 + b), lo, hi)
        n = np.linalg.norm(p)
        out[r] = p if n <= radius else p * (radius / n)
    return out


def _box_offsets(x, bounds):
    if bounds is None:
        return None, None
    lo, hi = bounds
    return np.minimum(lo - x, 0.0), np.maximum(hi - x, 0.0)


def solve_subproblem(
    model,
    x_k,
    delta: float,
    starts: int = 8,
    seed=0,
    *,
    bounds=None,
    max_iters: int = 200,
    tol: float = 1e-12,
    rtol: float = 1e-9,
) -> np.ndarray:
    """Approximately minimize ``model`` over ``B(x_k; delta)`` (intersected with ``bounds``).

    Multi-start projected gradient descent with Barzilai-Borwein trial steps and
    Armijo backtracking; one start
    is the center, so the returned step never increases the model. A start
    stops when its step moves less than ``tol`` (relative to ``max(1, delta)``)
    or gains less than ``rtol`` times its total decrease so far. Starts whose
    final values tie within 1e-12 are broken by the smaller step norm.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    x_k = np.asarray(x_k, dtype=float).reshape(-1)
    n = x_k.size
    lo, hi = _box_offsets(x_k, bounds)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    S = np.zeros((starts, n))
    if starts > 1:
        g = rng.standard_normal((starts - 1, n))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        S[1:] = project_ball_box(delta * g * rng.uniform(size=(starts - 1, 1)) ** (1.0 / n), delta, lo, hi)

    vals = model.predict(x_k + S)
    v_start = vals.copy()
    t = np.full(starts, delta)
    prev_S = np.full_like(S, np.nan)
    prev_G = np.full_like(S, np.nan)
    active = np.ones(starts, dtype=bool)
    for _ in range(max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        G = model.gradient(x_k + S[idx])
        gn = np.linalg.norm(G, axis=1)
        active[idx[gn == 0]] = False
        # Barzilai-Borwein trial step where the last move gives a positive curvature estimate
        ds = S[idx] - prev_S[idx]
        dg = G - prev_G[idx]
        sy = np.einsum("ij,ij->i", ds, dg)
        bb = np.where(np.isfinite(sy) & (sy > 0), np.einsum("ij,ij->i", ds, ds) / np.where(sy > 0, sy, 1.0), np.nan)
        step_t = np.where(np.isfinite(bb), bb, t[idx])
        step_t = np.minimum(step_t, 4.0 * delta / np.where(gn > 0, gn, 1.0))
        prev_S[idx], prev_G[idx] = S[idx], G
        done = np.zeros(idx.size, dtype=bool)
        for _ls in range(LINE_SEARCH_TRIES):
            p = np.flatnonzero(~done)
            ip = idx[p]
            trial = project_ball_box(S[ip] - step_t[p, None] * G[p], delta, lo, hi)
            tv = model.predict(x_k + trial)
            decrease = np.einsum("ij,ij->i", G[p], S[ip] - trial)
            ok = tv <= vals[ip] - 1e-4 * decrease
            moved = np.linalg.norm(trial - S[ip], axis=1)
            for j in np.flatnonzero(ok):
                i = ip[j]
                if gn[p[j]] > 0 and active[i]:
                    gain = vals[i] - tv[j]
                    converged = moved[j] <= tol * max(1.0, delta) or gain <= rtol * (v_start[i] - tv[j])
                    S[i], vals[i] = trial[j], tv[j]
                    t[i] = 2.0 * step_t[p[j]]
                    if converged:
                        active[i] = False
            done[p[ok]] = True
            if done.all():
                break
            step_t[p[~ok]] *= 0.5
        active[idx[~done]] = False

    best = float(np.min(vals))
    ties = np.flatnonzero(vals <= best + 1e-12)
    norms = np.linalg.norm(S[ties], axis=1)
    return S[ties[int(np.argmin(norms))]].copy()


def model_decrement_test(m_at_x: float, m_at_xs: float, delta: float, beta_dec: float) -> bool:
    """True when the predicted decrease reaches ``beta_dec * min(delta, delta**2)``."""
    return (m_at_x - m_at_xs) >= beta_dec * min(delta, delta * delta)


def estimate_rho(
    plant: ProblemSpec,
    model,
    x_k,
    s_k,
    rho_avg: int,
    rng: np.random.Generator,
    batch: Optional[int] = None,
) -> RhoEstimate:
    """Average ``rho_avg`` plant measurements at ``x_k`` and ``x_k + s_k``.

    ``samples`` lists every measurement as ``(x, z)`` so the caller can add
    them to the surrogate's data.
    """
    x_k = np.asarray(x_k, dtype=float)
    xs = x_k + np.asarray(s_k, dtype=float)
    m0, ms = model.predict(np.vstack([x_k, xs]))
    decrement = float(m0 - ms)
    if not decrement > 0:
        raise ValueError("estimate_rho needs a positive model decrement")
    samples = []
    z0, zs = [], []
    for _ in range(rho_avg):
        z0.append(plant.evaluate(x_k, rng, batch))
        samples.append((x_k.copy(), z0[-1]))
    for _ in range(rho_avg):
        zs.append(plant.evaluate(xs, rng, batch))
        samples.append((xs.copy(), zs[-1]))
    f0, fs = float(np.mean(z0)), float(np.mean(zs))
    return RhoEstimate((f0 - fs) / decrement, f0, fs, samples)


def update_state(state: TrustRegionState, rho: Optional[float], config: TrConfig, step=None) -> TrustRegionState:
    """Radius and iterate update; ``rho=None`` is the failed decrement test."""
    accept = rho is not None and rho >= config.eta
    if accept:
        if step is None:
            raise ValueError("an accepted update needs the step")
        x = state.x + np.asarray(step, dtype=float)
        delta = state.delta * config.gamma_inc
    else:
        x = state.x
        delta = state.delta * config.gamma_dec
    return replace(state, x=x, delta=delta, k=state.k + 1)


def initial_design(problem: ProblemSpec, x0, n: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """``x0`` followed by ``n - 1`` uniform samples of ``B(x0; radius)`` clipped to the bounds."""
    x0 = np.asarray(x0, dtype=float).reshape(problem.dim)
    g = rng.standard_normal((n - 1, problem.dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    X = x0 + radius * g * rng.uniform(size=(n - 1, 1)) ** (1.0 / problem.dim)
    X = np.vstack([x0, X])
    if problem.bounds is not None:
        X = np.clip(X, *problem.bounds)
    return X


def _gp_target(problem: ProblemSpec, mode: str, x, z) -> float:
    if mode == "mismatch":
        return float(z) - float(problem.nominal.predict(np.asarray(x)[None, :])[0])
    return float(z)


def _signal_cap(data: Dataset, config: TrConfig) -> Optional[float]:
    if config.signal_cap is None:
        return None
    return config.signal_cap * max(float(np.max(np.abs(data.outputs))), 1e-12)


def _noise_setting(problem: ProblemSpec, config: TrConfig) -> Optional[float]:
    if config.gp_noise == "learn":
        return None
    if config.gp_noise == "known" or problem.noise_model == "absolute":
        if problem.noise_model != "absolute":
            raise ValueError("gp_noise='known' needs an absolute noise model")
        return problem.noise_std
    return None


def run(
    problem: ProblemSpec,
    config: TrConfig,
    initial_data: Optional[Dataset] = None,
    x0=None,
    seed: int = 0,
    *,
    initial_theta: Optional[Hyperparams] = None,
    callback=None,
) -> RunResult:
    """Run the trust-region loop until ``max_iters`` or the radius drops below ``stop_radius``.

    ``initial_data`` holds raw plant measurements ``(x, z)``; when omitted an
    initial design of ``config.n_init`` points is evaluated around ``x0``.
    Iteration ``k`` measures the plant as batch ``k + 1``. ``callback(record,
    state)`` is invoked after every iteration.
    """
    if config.surrogate_mode == "mismatch" and problem.nominal is None:
        raise ValueError("mismatch mode needs a problem with a nominal model")
    x0 = problem.x0 if x0 is None else x0
    if x0 is None:
        raise ValueError("no starting point given")
    x = np.asarray(x0, dtype=float).reshape(problem.dim)
    noise_rng = np.random.default_rng([seed, 1])
    noise_std = _noise_setting(problem, config)
    mode = config.surrogate_mode
    initial_evals = 0

    if initial_data is None:
        n_init = config.n_init or 2 * problem.dim + 1
        X = initial_design(problem, x, n_init, config.init_radius or config.delta0, np.random.default_rng([seed, 0]))
        z = [problem.evaluate(p, noise_rng) for p in X]
        initial_data = Dataset(X, z)
        initial_evals = len(X)
    if len(initial_data) < 2:
        raise ValueError("need at least two initial samples")
    data = Dataset.empty(problem.dim)
    for xi, zi in zip(initial_data.inputs, initial_data.outputs):
        data, _ = add_point(data, xi, _gp_target(problem, mode, xi, zi), 0.0)

    state = TrustRegionState(x=x, delta=float(config.delta0), data=data, theta=initial_theta)
    stale = math.inf if initial_theta is None else 0
    at_x0 = np.flatnonzero(np.all(initial_data.inputs == x, axis=1))
    plant_value = float(initial_data.outputs[at_x0[0]]) if at_x0.size else math.nan
    trace: list[IterationRecord] = []

    try:
        while state.k < config.max_iters and state.delta >= config.stop_radius:
            k = state.k
            # Step 1: (re)build the surrogate on all data gathered so far
            if stale >= config.retrain_every or state.theta is None:
                init = [state.theta] if state.theta is not None else []
                theta = train(
                    state.data, config.train_restarts, [seed, 3, k], init=init,
                    noise_std=noise_std, min_noise_std=config.gp_min_noise,
                    max_signal_std=_signal_cap(state.data, config),
                )
                state = replace(state, theta=theta)
                stale = 0
            gp = fit(state.data, state.theta)
            surrogate = MismatchSurrogate(problem.nominal, gp) if mode == "mismatch" else gp
            state = replace(state, model=surrogate)

            # Step 2
            s = solve_subproblem(
                surrogate, state.x, state.delta, config.subproblem_starts,
                np.random.default_rng([seed, 2, k]), bounds=problem.bounds, max_iters=config.subproblem_iters,
            )
            m0, ms = surrogate.predict(np.vstack([state.x, state.x + s]))
            decrement = float(m0 - ms)

            # Step 3
            if not model_decrement_test(m0, ms, state.delta, config.beta_dec):
                rec = IterationRecord(k, state.x.copy(), state.delta, s, decrement, None, False, 0, plant_value)
                trace.append(rec)
                state = update_state(state, None, config)
                state.trace = trace
                if callback:
                    callback(rec, state)
                continue

            # Step 4
            est = estimate_rho(problem, surrogate, state.x, s, config.rho_avg, noise_rng, batch=k + 1)
            data = state.data
            min_dist = config.min_dist_factor * state.delta
            for xi, zi in est.samples:
                data, added = add_point(data, xi, _gp_target(problem, mode, xi, zi), min_dist)
                stale += added

            # Step 5
            accepted = est.rho >= config.eta
            plant_value = est.fs if accepted else est.f0
            rec = IterationRecord(
                k, state.x.copy(), state.delta, s, decrement, float(est.rho), bool(accepted),
                len(est.samples), plant_value,
            )
            trace.append(rec)
            state = update_state(replace(state, data=data), est.rho, config, s)
            state.trace = trace
            if callback:
                callback(rec, state)
    except (EvaluationError, ArithmeticError, RuntimeError) as exc:
        raise RunError(f"run failed at iteration {state.k}: {exc}", trace, exc) from exc

    grad_norm = problem.grad_norm(state.x) if problem.has_oracle else None
    theta = state.theta
    if theta is None:
        theta = train(state.data, config.train_restarts, [seed, 3, state.k], noise_std=noise_std)
    return RunResult(trace, state.x.copy(), state.delta, state.data, theta, initial_evals, config, grad_norm)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_trace_csv(trace: Sequence[IterationRecord], path, dim: Optional[int] = None) -> None:
    """One row per iteration; absent steps and ratios are empty cells."""
    if dim is None:
        if not trace:
            raise ValueError("dim is required for an empty trace")
        dim = len(trace[0].x)
    header = (
        ["k"] + [f"x_{i + 1}" for i in range(dim)] + ["delta"] + [f"s_{i + 1}" for i in range(dim)]
        + ["model_decrement", "rho", "accepted", "plant_evals_used", "plant_value_estimate"]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in trace:
            step = [""] * dim if r.step is None else [repr(float(v)) for v in r.step]
            w.writerow(
                [r.k] + [repr(float(v)) for v in r.x] + [repr(float(r.delta))] + step
                + [repr(float(r.model_decrement)), _fmt(r.rho), int(r.accepted), r.plant_evals_used,
                   repr(float(r.plant_value_estimate))]
            )

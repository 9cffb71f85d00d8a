"""Semi-batch reactor benchmark (acetoacetylation of pyrrole with diketene).

Reactions ``A + B -> C`` (k1), ``2B -> D`` (k2), ``B -> E`` (k3) and
``B + C -> F`` (k4) in a fed-batch vessel fed with pure B. The recipe is a
three-arc feed profile: ``F_max`` until ``t_m``, a constant ``F`` until
``t_s``, then no feed. The nominal model ignores the last two reactions.

Physical parameters other than the per-scenario ``k3``/``k4`` are
configuration; the defaults follow the published case study of this reactor
(Chachuat, Srinivasan and Bonvin, 2009).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from numba import njit

from .base import EvaluationError, ProblemSpec

__all__ = [
    "SCENARIOS",
    "ReactorParams",
    "ArcInput",
    "StateError",
    "feed_profile",
    "reactor_rhs",
    "simulate_batch",
    "simulate_trajectory",
    "Trajectory",
    "terminal_penalty",
    "batch_objective",
    "model_objective",
    "scenario_schedule",
    "ReactorScaling",
    "reactor_problem",
    "optimize_cost",
]

# per-scenario uncertain rate constants (k3 in 1/min, k4 in L/(mol min)) and batch ranges
SCENARIOS = {
    "I": {"k3": 0.01, "k4": 0.009, "batches": (1, 7)},
    "II": {"k3": 0.28, "k4": 0.001, "batches": (8, 22)},
}


class StateError(ArithmeticError):
    """Non-physical reactor state (e.g. nonpositive volume)."""


@dataclass(frozen=True)
class ReactorParams:
    k1: float = 0.053
    k2: float = 0.128
    c_b_in: float = 5.0
    c_a0: float = 0.72
    c_b0: float = 0.05145
    c_c0: float = 0.02292
    c_d0: float = 0.01392
    v0: float = 1.0
    t_f: float = 250.0
    f_max: float = 0.002
    c_b_max: float = 0.025
    c_d_max: float = 0.15
    penalty_weight: float = 100.0
    n_steps: int = 1000

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")
        if self.t_f <= 0 or self.v0 <= 0:
            raise ValueError("t_f and v0 must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @property
    def h(self) -> float:
        return self.t_f / self.n_steps

    def initial_state(self) -> np.ndarray:
        return np.array([self.c_a0, self.c_b0, self.c_c0, self.c_d0, self.v0])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ReactorParams":
        return cls(**d)


@dataclass(frozen=True)
class ArcInput:
    """Three-arc feed recipe; times in minutes, feed in L/min."""

    t_m: float
    t_s: float
    F: float

    def validate(self, params: ReactorParams) -> None:
        tol = 1e-12 * max(1.0, params.t_f)
        if not (-tol <= self.t_m <= self.t_s + tol and self.t_s <= params.t_f + tol):
            raise ValueError(f"need 0 <= t_m <= t_s <= t_f, got t_m={self.t_m}, t_s={self.t_s}")
        if not (0.0 <= self.F <= params.f_max * (1 + 1e-12)):
            raise ValueError(f"need 0 <= F <= F_max={params.f_max}, got {self.F}")


def feed_profile(pi: ArcInput, t: float, params: ReactorParams) -> float:
    pi.validate(params)
    if t < pi.t_m:
        return params.f_max
    if t < pi.t_s:
        return pi.F
    return 0.0


@njit(cache=True)
def _rhs(ca, cb, cc, cd, v, feed, k1, k2, k3, k4, cbin):
    r1 = k1 * ca * cb
    dil = feed / v
    return (
        -r1 - dil * ca,
        -r1 - 2.0 * k2 * cb * cb - k3 * cb - k4 * cb * cc + dil * (cbin - cb),
        r1 - k4 * cb * cc - dil * cc,
        k2 * cb * cb - dil * cd,
        feed,
    )


def reactor_rhs(state, F: float, params: ReactorParams, k3: float = 0.0, k4: float = 0.0) -> np.ndarray:
    """Material balances; ``state = (c_A, c_B, c_C, c_D, V)``."""
    ca, cb, cc, cd, v = (float(s) for s in state)
    if not v > 0:
        raise StateError(f"volume must be positive, got {v}")
    return np.array(_rhs(ca, cb, cc, cd, v, float(F), params.k1, params.k2, k3, k4, params.c_b_in))


@njit(cache=True)
def _rk4(y, dt, feed, k1, k2, k3, k4, cbin):
    a = _rhs(y[0], y[1], y[2], y[3], y[4], feed, k1, k2, k3, k4, cbin)
    b = _rhs(
        y[0] + 0.5 * dt * a[0], y[1] + 0.5 * dt * a[1], y[2] + 0.5 * dt * a[2],
        y[3] + 0.5 * dt * a[3], y[4] + 0.5 * dt * a[4], feed, k1, k2, k3, k4, cbin,
    )
    c = _rhs(
        y[0] + 0.5 * dt * b[0], y[1] + 0.5 * dt * b[1], y[2] + 0.5 * dt * b[2],
        y[3] + 0.5 * dt * b[3], y[4] + 0.5 * dt * b[4], feed, k1, k2, k3, k4, cbin,
    )
    d = _rhs(
        y[0] + dt * c[0], y[1] + dt * c[1], y[2] + dt * c[2],
        y[3] + dt * c[3], y[4] + dt * c[4], feed, k1, k2, k3, k4, cbin,
    )
    for i in range(5):
        y[i] += dt * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) / 6.0


@njit(cache=True)
def _integrate(y0, t_m, t_s, f_arc, f_max, t_f, n_steps, k1, k2, k3, k4, cbin, record):
    """Fixed-step RK4 whose step grid is split at the two switch times.

    Returns the terminal state, the smallest concentration seen at any step
    boundary and, when ``record`` is set, the state on the uniform grid.
    """
    y = y0.copy()
    h = t_f / n_steps
    traj = np.empty((n_steps + 1 if record else 0, 5))
    if record:
        traj[0, :] = y
    cmin = min(y[0], y[1], y[2], y[3])
    for i in range(n_steps):
        t0 = i * h
        t1 = t_f if i == n_steps - 1 else (i + 1) * h
        cuts = [t0]
        if t0 < t_m < t1:
            cuts.append(t_m)
        if t0 < t_s < t1 and t_s != t_m:
            cuts.append(t_s)
        cuts.append(t1)
        for j in range(len(cuts) - 1):
            a = cuts[j]
            b = cuts[j + 1]
            mid = 0.5 * (a + b)
            if mid < t_m:
                feed = f_max
            elif mid < t_s:
                feed = f_arc
            else:
                feed = 0.0
            if y[4] <= 0.0:
                return y, -np.inf, traj
            _rk4(y, b - a, feed, k1, k2, k3, k4, cbin)
            cmin = min(cmin, y[0], y[1], y[2], y[3])
        if record:
            traj[i + 1, :] = y
    return y, cmin, traj


def _rates(scenario: Optional[str], k3: Optional[float], k4: Optional[float]) -> tuple[float, float]:
    if scenario is not None:
        try:
            s = SCENARIOS[scenario]
        except KeyError:
            raise ValueError(f"unknown scenario {scenario!r}") from None
        return s["k3"], s["k4"]
    return (0.0 if k3 is None else k3), (0.0 if k4 is None else k4)


def _run(pi: ArcInput, params: ReactorParams, k3: float, k4: float, record: bool):
    pi.validate(params)
    y, cmin, traj = _integrate(
        params.initial_state(), float(pi.t_m), float(pi.t_s), float(pi.F), params.f_max,
        params.t_f, int(params.n_steps), params.k1, params.k2, float(k3), float(k4), params.c_b_in, record,
    )
    if not np.isfinite(cmin) or not np.all(np.isfinite(y)):
        raise StateError(f"integration failed for {pi}")
    return y, cmin, traj


def simulate_batch(pi: ArcInput, params: ReactorParams, scenario: Optional[str] = None, *, k3=None, k4=None) -> np.ndarray:
    """Terminal state ``(c_A, c_B, c_C, c_D, V)`` at ``t_f``.

    ``scenario`` selects the plant rate constants; with neither a scenario nor
    explicit ``k3``/``k4`` the nominal model (``k3 = k4 = 0``) is simulated.
    """
    k3, k4 = _rates(scenario, k3, k4)
    return _run(pi, params, k3, k4, False)[0]


@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray
    feed: np.ndarray
    min_concentration: float

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "c_A", "c_B", "c_C", "c_D", "V", "F"])
            for t, s, f in zip(self.t, self.states, self.feed):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in s] + [repr(float(f))])


def simulate_trajectory(pi: ArcInput, params: ReactorParams, scenario: Optional[str] = None, *, k3=None, k4=None) -> Trajectory:
    k3, k4 = _rates(scenario, k3, k4)
    _, cmin, traj = _run(pi, params, k3, k4, True)
    t = np.linspace(0.0, params.t_f, params.n_steps + 1)
    feed = np.array([feed_profile(pi, min(tt, params.t_f), params) for tt in t])
    feed[-1] = 0.0 if pi.t_s < params.t_f else feed[-1]
    return Trajectory(t, traj, feed, float(cmin))


def terminal_penalty(state, params: ReactorParams) -> float:
    vb = max(0.0, float(state[1]) - params.c_b_max)
    vd = max(0.0, float(state[3]) - params.c_d_max)
    return params.penalty_weight * (vb * vb + vd * vd)


def batch_objective(
    pi: ArcInput,
    params: ReactorParams,
    scenario: Optional[str],
    rng: Optional[np.random.Generator] = None,
    noise_rel: float = 0.05,
) -> float:
    """Penalized cost ``-c_C(t_f) V(t_f) + w * (terminal violations)**2`` (minimize).

    With ``scenario=None`` the nominal model is used. When ``rng`` is given a
    zero-mean Gaussian with standard deviation ``noise_rel * |cost|`` is added.
    """
    state = simulate_batch(pi, params, scenario)
    cost = -float(state[2] * state[4]) + terminal_penalty(state, params)
    if rng is not None and noise_rel > 0:
        cost += noise_rel * abs(cost) * float(rng.standard_normal())
    return cost


def model_objective(pi: ArcInput, params: ReactorParams) -> float:
    return batch_objective(pi, params, None)


def scenario_schedule(batch_index: int) -> str:
    if batch_index < 1:
        raise ValueError("batch indices start at 1")
    return "I" if batch_index <= SCENARIOS["I"]["batches"][1] else "II"


@dataclass(frozen=True)
class ReactorScaling:
    """Map between decision vectors in ``[0, scale]**3`` and recipes.

    ``x = (t_m, t_s, F)`` scaled by ``t_f``, ``t_f`` and ``F_max``. Inputs are
    clipped to the box and ``t_s`` is raised to ``t_m`` when it falls below.
    """

    params: ReactorParams = field(default_factory=ReactorParams)
    scale: float = 10.0

    def to_arc(self, x) -> ArcInput:
        u = np.clip(np.asarray(x, dtype=float).reshape(3) / self.scale, 0.0, 1.0)
        t_m = u[0] * self.params.t_f
        t_s = max(u[1] * self.params.t_f, t_m)
        return ArcInput(float(t_m), float(t_s), float(u[2] * self.params.f_max))

    def from_arc(self, pi: ArcInput) -> np.ndarray:
        p = self.params
        return self.scale * np.array([pi.t_m / p.t_f, pi.t_s / p.t_f, pi.F / p.f_max])

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(3), np.full(3, self.scale)


class _ReactorCost:
    """Vectorizable cost ``x -> float`` for one set of rate constants."""

    def __init__(self, scaling: ReactorScaling, scenario: Optional[str], fd_step: float = 1e-5, cost_scale: float = 1.0):
        self.scaling = scaling
        self.scenario = scenario
        self.cost_scale = cost_scale
        self.dim = 3
        self.fd_step = fd_step * scaling.scale

    def __call__(self, x) -> float:
        try:
            return self.cost_scale * batch_objective(self.scaling.to_arc(x), self.scaling.params, self.scenario)
        except StateError as exc:
            raise EvaluationError(str(exc), x) from exc

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        return np.array([self(x) for x in X])

    def gradient(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        lo, hi = self.scaling.bounds
        G = np.empty_like(X)
        for r, x in enumerate(X):
            for i in range(3):
                # one-sided at the box faces, where clipping flattens the cost
                xp, xm = x.copy(), x.copy()
                xp[i] = min(x[i] + self.fd_step, hi[i])
                xm[i] = max(x[i] - self.fd_step, lo[i])
                G[r, i] = (self(xp) - self(xm)) / (xp[i] - xm[i]) if xp[i] > xm[i] else 0.0
        return G


def reactor_problem(
    params: Optional[ReactorParams] = None,
    scale: float = 10.0,
    noise_rel: float = 0.05,
    schedule=scenario_schedule,
    cost_scale: float = 1.0,
) -> ProblemSpec:
    """Batch-to-batch reactor problem in scaled coordinates.

    The plant switches scenario by batch index through ``schedule``; the
    problem's default objective (used for the initial design) is Scenario I.
    Costs are multiplied by ``cost_scale``, which keeps the decrement test's
    ``min(Delta, Delta**2)`` threshold commensurate with the cost.
    """
    params = params or ReactorParams()
    if not cost_scale > 0:
        raise ValueError("cost_scale must be positive")
    scaling = ReactorScaling(params, scale)
    plants = {name: _ReactorCost(scaling, name, cost_scale=cost_scale) for name in SCENARIOS}
    nominal = _ReactorCost(scaling, None, cost_scale=cost_scale)
    return ProblemSpec(
        name="reactor",
        dim=3,
        f=plants["I"],
        noise_std=noise_rel,
        noise_model="relative",
        nominal=nominal,
        schedule=lambda batch: plants[schedule(batch)],
        bounds=scaling.bounds,
        info={"scaling": scaling, "plants": plants, "cost_scale": cost_scale, "schedule": schedule},
    )


def optimize_cost(fun, bounds, seed: int = 0, maxiter: int = 200) -> tuple[np.ndarray, float]:
    """Seeded global direct search (differential evolution, polished) over a box."""
    from scipy.optimize import differential_evolution

    lo, hi = bounds
    res = differential_evolution(
        lambda x: float(fun(x)), list(zip(lo, hi)), seed=seed, maxiter=maxiter, tol=1e-10, polish=True,
    )
    return np.asarray(res.x, dtype=float), float(res.fun)

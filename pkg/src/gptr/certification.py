"""Full-linearity constants and empirical certification of surrogates.

A surrogate ``m`` is kappa-fully-linear on ``B(x; Delta)`` when

    |f(x+s) - m(x+s)|           <= kappa_ef * Delta**2
    ||grad f(x+s) - grad m(x+s)|| <= kappa_eg * Delta

for every ``||s|| <= Delta``. The checks here evaluate both conditions on the
deterministic ball grid of :func:`gptr.gp.ball_grid`, so they need an exact
oracle for ``f`` and are meant for tests and benchmarks.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from .gp import Dataset, GpModel, add_point, ball_grid, fit
from .kernel import Hyperparams, _as_point

__all__ = [
    "FullLinearityConstants",
    "InfeasibleConstantsError",
    "CertificationReport",
    "alpha_lower_bound",
    "mismatch_bound",
    "certify_zeroth_order",
    "certify_first_order",
    "estimate_alpha",
    "noisy_gp_builder",
    "theorem2_radius_cap",
    "union_bound_beta",
    "sample_gp_draws",
    "mismatch_coverage",
    "quadratic_stencil",
    "shrinking_radius_certification",
]

DEFAULT_GRID = 256


class InfeasibleConstantsError(ValueError):
    """The constants admit no positive trust-region radius."""


@dataclass(frozen=True)
class FullLinearityConstants:
    kappa_ef: float = 1.0
    kappa_eg: float = 10.0
    nu1m: float = 1.0
    gamma_lh: float = 1.0
    kappa_bhh: float = 1.0
    alpha: float = 0.9
    delta: float = 0.05
    beta_cap: float = 4.0
    zeta: float = 1.0

    def __post_init__(self):
        for name in ("kappa_ef", "kappa_eg", "nu1m", "gamma_lh", "kappa_bhh", "beta_cap", "zeta"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive, got {v}")
        for name in ("alpha", "delta"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "FullLinearityConstants":
        return cls(**{k: float(v) for k, v in d.items()})


def alpha_lower_bound(gamma_inc: float, gamma_dec: float) -> float:
    """Smallest full-linearity probability compatible with the radius factors.

    Returns the largest of ``1/2``,
    ``1 - a / (4 (a/2 + b))`` and ``1 - (1 - gamma_dec) / (2 (gamma_inc**2 - gamma_dec))``
    with ``a = (gamma_inc - 1) / gamma_inc`` and ``b = (1 - gamma_dec) / gamma_dec``.
    """
    if not (0 < gamma_dec < 1 < gamma_inc):
        raise ValueError(f"need 0 < gamma_dec < 1 < gamma_inc, got {gamma_dec}, {gamma_inc}")
    a = (gamma_inc - 1.0) / gamma_inc
    b = (1.0 - gamma_dec) / gamma_dec
    second = 1.0 - a / (4.0 * ((gamma_inc - 1.0) / (2.0 * gamma_inc) + b))
    third = 1.0 - (1.0 - gamma_dec) / (2.0 * (gamma_inc**2 - gamma_dec))
    return max(0.5, second, third)


def mismatch_bound(model: GpModel, x, N: int, consts: FullLinearityConstants) -> float:
    """High-probability bound ``sqrt(beta) * sigma_z(x)`` on ``|m(x) - f(x)|``."""
    if N < 1:
        raise ValueError("N must be a positive integer")
    if len(model.dataset) and N != len(model.dataset):
        raise ValueError(f"model holds {len(model.dataset)} samples, N={N}")
    x = _as_point(x, model.dim)
    return math.sqrt(consts.beta_cap) * math.sqrt(float(model.var(x)[0]))


def union_bound_beta(delta: float, n_points: int = 1) -> float:
    """``beta`` such that ``sqrt(beta)`` is the two-sided Gaussian quantile at ``delta / n_points``.

    For a function drawn from the GP prior the scaled error
    ``(f - m) / sigma_z`` is standard normal at every point, so this choice
    covers all ``n_points`` simultaneously with probability at least
    ``1 - delta``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if n_points < 1:
        raise ValueError("n_points must be positive")
    return float(ndtri(1.0 - delta / (2.0 * n_points)) ** 2)


@dataclass(frozen=True)
class CertificationReport:
    """Outcome of one grid-based full-linearity check."""

    order: str
    kappa: float
    radius: float
    center: tuple[float, ...]
    grid: int
    max_error: float
    ratio: float
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [
            f"order = {self.order}",
            f"kappa = {self.kappa!r}",
            f"radius = {self.radius!r}",
            "center = " + ", ".join(repr(float(c)) for c in self.center),
            f"grid = {self.grid}",
            f"max_error = {self.max_error!r}",
            f"ratio = {self.ratio!r}",
            f"passed = {str(self.passed).lower()}",
        ]
        lines += [f"{k} = {v!r}" for k, v in self.extra.items()]
        return "\n".join(lines) + "\n"


def _ratio(err: float, scale: float) -> float:
    if scale > 0:
        return err / scale
    return 0.0 if err == 0 else math.inf


def _eval_rows(fun, pts) -> np.ndarray:
    return np.array([np.asarray(fun(p), dtype=float) for p in pts])


def certify_zeroth_order(model, f_oracle: Callable, center, radius: float, kappa_ef: float, grid: int = DEFAULT_GRID):
    """Check ``|f - m| <= kappa_ef * radius**2`` on the ball grid."""
    pts = ball_grid(center, radius, grid)
    err = np.abs(_eval_rows(f_oracle, pts).reshape(-1) - model.predict(pts))
    max_err = float(np.max(err))
    ratio = _ratio(max_err, kappa_ef * radius**2)
    return CertificationReport("zeroth", float(kappa_ef), float(radius), tuple(map(float, pts[0])), len(pts), max_err, ratio, ratio <= 1.0)


def certify_first_order(model, grad_oracle: Callable, center, radius: float, kappa_eg: float, grid: int = DEFAULT_GRID):
    """Check ``||grad f - grad m|| <= kappa_eg * radius`` on the ball grid."""
    pts = ball_grid(center, radius, grid)
    G = _eval_rows(grad_oracle, pts).reshape(pts.shape)
    err = np.linalg.norm(G - model.gradient(pts), axis=1)
    max_err = float(np.max(err))
    ratio = _ratio(max_err, kappa_eg * radius)
    return CertificationReport("first", float(kappa_eg), float(radius), tuple(map(float, pts[0])), len(pts), max_err, ratio, ratio <= 1.0)


def estimate_alpha(
    model_builder: Callable[[np.random.Generator], object],
    f_oracle: Callable,
    center,
    radius: float,
    consts: FullLinearityConstants,
    trials: int,
    seed: int,
    *,
    grad_oracle: Callable,
    grid: int = DEFAULT_GRID,
) -> float:
    """Monte Carlo estimate of the probability that a freshly built model is fully linear.

    ``model_builder(rng)`` must build one model from noisy samples drawn with
    ``rng``; trial ``t`` uses the stream ``default_rng([seed, t])``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    passes = 0
    for t in range(trials):
        model = model_builder(np.random.default_rng([seed, t]))
        zero = certify_zeroth_order(model, f_oracle, center, radius, consts.kappa_ef, grid)
        if not zero.passed:
            continue
        first = certify_first_order(model, grad_oracle, center, radius, consts.kappa_eg, grid)
        passes += first.passed
    return passes / trials


def noisy_gp_builder(f: Callable, center, radius: float, n_samples: int, noise_std: float, theta: Hyperparams):
    """Model builder for :func:`estimate_alpha`: noisy samples uniform in the ball, fixed ``theta``."""
    c = np.asarray(center, dtype=float).reshape(-1)

    def build(rng: np.random.Generator) -> GpModel:
        g = rng.standard_normal((n_samples, c.size))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = rng.uniform(size=(n_samples, 1)) ** (1.0 / c.size)
        X = c + radius * g * r
        z = np.array([float(f(x)) for x in X]) + noise_std * rng.standard_normal(n_samples)
        return fit(Dataset(X, z), theta)

    return build


def theorem2_radius_cap(consts: FullLinearityConstants) -> float:
    """Radius below which zeroth-order accuracy implies the gradient condition.

    Equals ``(6 / gamma_lh) * (kappa_eg - 2 kappa_ef - kappa_bhh)``.
    """
    cap = 6.0 / consts.gamma_lh * (consts.kappa_eg - 2.0 * consts.kappa_ef - consts.kappa_bhh)
    if not cap > 0:
        raise InfeasibleConstantsError(
            f"kappa_eg={consts.kappa_eg} must exceed 2*kappa_ef + kappa_bhh = "
            f"{2 * consts.kappa_ef + consts.kappa_bhh}"
        )
    return cap


def sample_gp_draws(theta: Hyperparams, X: np.ndarray, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Joint prior draws of a zero-mean GP at the rows of ``X``, shape ``(n_draws, len(X))``."""
    from .kernel import cov_matrix

    K = cov_matrix(X, theta)
    w, V = np.linalg.eigh(K)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return rng.standard_normal((n_draws, len(X))) @ root.T


def mismatch_coverage(
    theta: Hyperparams,
    n_train: int,
    n_grid: int,
    n_draws: int,
    beta_cap: float,
    seed: int,
    lower: float = 0.0,
    upper: float = 5.0,
) -> np.ndarray:
    """Per-draw fraction of grid points where ``|f - m| <= sqrt(beta_cap) sigma_z``.

    One-dimensional experiment: each draw samples ``f`` from the GP prior with
    hyperparameters ``theta`` jointly at ``n_train`` uniform inputs and an
    ``n_grid`` point grid on ``[lower, upper]``, observes the training values
    with noise ``theta.noise_std`` and conditions a GP with the same ``theta``.
    """
    if theta.dim != 1:
        raise ValueError("mismatch_coverage is a one-dimensional experiment")
    rng = np.random.default_rng(seed)
    grid = np.linspace(lower, upper, n_grid)[:, None]
    root_beta = math.sqrt(beta_cap)
    out = np.empty(n_draws)
    for d in range(n_draws):
        Xtr = rng.uniform(lower, upper, size=(n_train, 1))
        f = sample_gp_draws(theta, np.vstack([Xtr, grid]), 1, rng)[0]
        z = f[:n_train] + theta.noise_std * rng.standard_normal(n_train)
        model = fit(Dataset(Xtr, z), theta)
        err = np.abs(f[n_train:] - model.mean(grid))
        out[d] = float(np.mean(err <= root_beta * model.std(grid)))
    return out


def quadratic_stencil(center, radius: float) -> np.ndarray:
    """Center, ``+-radius e_i`` and ``radius (e_i + e_j) / sqrt(2)``; unisolvent for quadratics."""
    c = np.asarray(center, dtype=float).reshape(-1)
    n = c.size
    E = np.eye(n)
    pts = [c]
    pts += [c + radius * E[i] for i in range(n)]
    pts += [c - radius * E[i] for i in range(n)]
    pts += [c + radius * (E[i] + E[j]) / math.sqrt(2.0) for i in range(n) for j in range(i + 1, n)]
    return np.array(pts)


def shrinking_radius_certification(
    f: Callable,
    center,
    radius0: float,
    gamma_dec: float,
    kappa_ef: float,
    theta: Hyperparams,
    max_shrinks: int = 50,
    grid: int = DEFAULT_GRID,
) -> tuple[int | None, list[float]]:
    """Shrink the radius by ``gamma_dec`` until the zeroth-order check passes.

    At every radius the noiseless samples of a quadratic stencil inside the
    current ball are added to the data (nearly coincident points are skipped)
    and the GP is refit with the fixed ``theta``. Returns the index of the
    first passing radius (``None`` if none within ``max_shrinks``) and the
    violation ratios seen along the way.
    """
    if not 0 < gamma_dec < 1:
        raise ValueError("gamma_dec must lie in (0, 1)")
    c = _as_point(center, theta.dim)
    data = Dataset.empty(theta.dim)
    ratios: list[float] = []
    radius = float(radius0)
    for j in range(max_shrinks + 1):
        for p in quadratic_stencil(c, radius):
            data, _ = add_point(data, p, float(f(p)), min_dist=0.05 * radius)
        model = fit(data, theta)
        report = certify_zeroth_order(model, f, c, radius, kappa_ef, grid)
        ratios.append(report.ratio)
        if report.passed:
            return j, ratios
        radius *= gamma_dec
    return None, ratios

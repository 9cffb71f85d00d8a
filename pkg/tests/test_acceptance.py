"""Acceptance criteria, one test each; outcomes are summarized at the end of the session."""
import math
import time

import numpy as np
import pytest

from gptr.certification import (
    alpha_lower_bound,
    mismatch_coverage,
    shrinking_radius_certification,
    union_bound_beta,
)
from gptr.gp import Dataset, fit, log_marginal_likelihood, mean_grad, posterior_mean, posterior_var
from gptr.kernel import Hyperparams, cov_matrix
from gptr.problems import analytic_suite, quadratic, rosenbrock
from gptr.runner import ExperimentConfig, ProblemConfig, compare_modes, run_experiment
from gptr.trust_region import TrConfig, run


def test_c01_gp_interpolation(acceptance):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    X = rng.uniform(-2, 2, size=(10, 2))
    z = rng.normal(size=10)
    model = fit(Dataset(X, z), Hyperparams(1.0, (1.0, 1.0), 0.0))
    mean_err = max(abs(posterior_mean(model, x) - zi) for x, zi in zip(X, z))
    var_max = max(posterior_var(model, x) for x in X)
    elapsed = time.perf_counter() - t0
    ok = mean_err < 1e-8 and var_max < 1e-8 and elapsed < 1.0
    acceptance(1, ok, "GP interpolation", f"max |mean - z| {mean_err:.1e}, max var {var_max:.1e}, {elapsed:.3f} s")
    assert ok


def test_c02_gradient_fidelity(acceptance):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 4))
        th = Hyperparams(rng.uniform(0.5, 2.0), tuple(rng.uniform(0.3, 3.0, n)), rng.uniform(0.0, 0.3))
        l = int(rng.integers(1, 15))
        model = fit(Dataset(rng.uniform(-1, 1, (l, n)), rng.normal(size=l)), th)
        x = rng.uniform(-1.2, 1.2, n)
        g = mean_grad(model, x)
        h = 1e-4
        fd = np.array([(posterior_mean(model, x + h * e) - posterior_mean(model, x - h * e)) / (2 * h) for e in np.eye(n)])
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    ok = worst < 1e-5
    acceptance(2, ok, "gradient fidelity", f"worst relative error {worst:.1e} over 100 pairs")
    assert ok


def _naive_lml(theta, data):
    Q = cov_matrix(data.inputs, theta) + theta.noise_std**2 * np.eye(len(data))
    _, logdet = np.linalg.slogdet(Q)
    z = data.outputs
    return -0.5 * z @ np.linalg.inv(Q) @ z - 0.5 * logdet - 0.5 * len(z) * math.log(2 * math.pi)


def test_c03_likelihood_equivalence(acceptance):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 4))
        l = int(rng.integers(1, 21))
        th = Hyperparams(rng.uniform(0.5, 2.0), tuple(rng.uniform(0.3, 3.0, n)), rng.uniform(0.1, 0.5))
        data = Dataset(rng.uniform(-2, 2, (l, n)), rng.normal(size=l))
        worst = max(worst, abs(log_marginal_likelihood(th, data) - _naive_lml(th, data)))
    ok = worst < 1e-8
    acceptance(3, ok, "likelihood equivalence", f"worst absolute difference {worst:.1e} over 50 datasets")
    assert ok


def _three_expressions(gi, gd):
    return max(
        0.5,
        1 - ((gi - 1) / gi) / (4 * ((gi - 1) / (2 * gi) + (1 - gd) / gd)),
        1 - (1 - gd) / (2 * (gi**2 - gd)),
    )


def test_c04_alpha_values(acceptance):
    a1, a2 = alpha_lower_bound(3.0, 0.9), alpha_lower_bound(2.0, 0.5)
    ok = (
        abs(a1 - 0.993827) <= 1e-6
        and abs(a2 - 0.928571) <= 1e-6
        and a1 == pytest.approx(_three_expressions(3.0, 0.9), rel=1e-14)
        and a2 == pytest.approx(_three_expressions(2.0, 0.5), rel=1e-14)
    )
    acceptance(4, ok, "alpha lower bound", f"alpha(3, 0.9) = {a1:.6f}, alpha(2, 0.5) = {a2:.6f}")
    assert ok


def test_c05_empirical_mismatch_bound(acceptance):
    t0 = time.perf_counter()
    beta = union_bound_beta(0.1, 100)
    cov = mismatch_coverage(Hyperparams(1.0, (4.0,), 0.1), n_train=10, n_grid=100, n_draws=200, beta_cap=beta, seed=0)
    frac = float(np.mean(cov >= 0.9))
    elapsed = time.perf_counter() - t0
    ok = frac >= 0.95 and elapsed < 120
    acceptance(5, ok, "empirical mismatch bound", f"coverage >= 0.9 in {frac:.1%} of 200 draws, {elapsed:.1f} s")
    assert ok


def _curvature(problem, x, h=1e-5):
    H = np.array([(problem.grad(x + h * e) - problem.grad(x - h * e)) / (2 * h) for e in np.eye(problem.dim)])
    return float(np.linalg.norm(0.5 * (H + H.T), 2))


def test_c06_shrinking_radius_certification(acceptance):
    # kappa_ef carries units of f / x**2, so the sweep is relative to the curvature at the center
    failures, worst = [], 0
    for p in analytic_suite():
        c = p.x0
        scale = _curvature(p, c)
        theta = Hyperparams(max(1.0, abs(p.f(c))), (1.0,) * p.dim, 0.0)
        for rel in (0.01, 0.1, 1.0, 10.0):
            for gamma_dec in (0.9, 0.5):
                j, _ = shrinking_radius_certification(p.f, c, 1.0, gamma_dec, rel * scale, theta, max_shrinks=50)
                if j is None:
                    failures.append((p.name, rel, gamma_dec))
                else:
                    worst = max(worst, j)
    ok = not failures
    detail = f"all 24 cases pass within {worst} shrinks" if ok else f"no pass within 50 shrinks for {failures}"
    acceptance(6, ok, "shrinking-radius certification", detail)
    assert ok


def test_c07_convergence_proxy(acceptance):
    t0 = time.perf_counter()
    cfg = TrConfig.analytic()
    rates = {}
    for p in (quadratic(2), rosenbrock()):
        results = [run(p, cfg, seed=s) for s in range(50)]
        assert all(len(r.trace) <= 200 for r in results)
        rates[p.name] = float(np.mean([r.oracle_grad_norm < 1e-2 for r in results]))
    elapsed = time.perf_counter() - t0
    ok = all(r >= 0.95 for r in rates.values()) and elapsed < 300
    detail = ", ".join(f"{k} {v:.0%}" for k, v in rates.items()) + f" of 50 seeds below 1e-2, {elapsed:.0f} s"
    acceptance(7, ok, "convergence proxy", detail)
    assert ok


def test_c08_evaluation_count(acceptance):
    tr = TrConfig.analytic()
    wins = {}
    for p in analytic_suite():
        count = 0
        for seed in range(10):
            configs = [ExperimentConfig(seed=seed, mode=m, problem=ProblemConfig(p.name), tr=tr) for m in ("gp", "linear")]
            gp, lin = compare_modes(configs)
            g, l = gp["evals_to_tolerance"], lin["evals_to_tolerance"]
            count += g is not None and (l is None or g < l)
        wins[p.name] = count
    ok = all(w >= 8 for w in wins.values())
    acceptance(8, ok, "evaluation count", ", ".join(f"{k} {v}/10" for k, v in wins.items()) + " paired seeds won by GP")
    assert ok


@pytest.fixture(scope="module")
def reactor_default():
    t0 = time.perf_counter()
    res = run_experiment(ExperimentConfig(seed=0, problem=ProblemConfig("reactor")), write=False)
    return res, time.perf_counter() - t0


def test_c09_reactor_recovery(acceptance, reactor_default):
    res, elapsed = reactor_default
    a = res.summary["assessment"]
    switch = res.summary["switch_batch"]
    window = [r for r in res.batches if switch <= r["batch"] <= switch + 5]
    best = min(r["cost"] for r in window)
    optimum = window[0]["optimal_cost"]
    ok = a["recovered"] and a["outperforms_model"] and elapsed < 120
    detail = (
        f"best cost in batches {switch}-{switch + 5} is {best:.2f} vs optimum {optimum:.2f} "
        f"(needs <= {optimum + 0.05 * abs(optimum):.2f}); outperforms model from batch {switch + 1}: "
        f"{a['outperforms_model']}; {elapsed:.0f} s"
    )
    acceptance(9, ok, "reactor recovery", detail)
    assert a["outperforms_model"]
    assert elapsed < 120
    assert a["recovered"], detail


def test_c10_determinism(acceptance, tmp_path):
    tr = TrConfig.analytic(max_iters=40)
    cases = [
        ExperimentConfig(seed=3, mode=m, problem=ProblemConfig("sine", {"noise_std": 0.02}), tr=tr)
        for m in ("gp", "linear", "quadratic")
    ]
    cases.append(ExperimentConfig(seed=3, problem=ProblemConfig("reactor")))
    same = []
    for i, c in enumerate(cases):
        a, b = tmp_path / f"{i}a", tmp_path / f"{i}b"
        fa, fb = run_experiment(c, a).files, run_experiment(c, b).files
        csvs = [k for k in fa if str(fa[k]).endswith(".csv")]
        same.append(all(fa[k].read_bytes() == fb[k].read_bytes() for k in csvs))
    ok = all(same)
    acceptance(10, ok, "determinism", f"{sum(same)}/{len(same)} experiments rerun with byte-identical CSVs")
    assert ok

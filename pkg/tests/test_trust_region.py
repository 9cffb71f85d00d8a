import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gptr.problems import ProblemSpec, quadratic
from gptr.surrogate import CallableSurrogate
from gptr.trust_region import (
    TrConfig,
    TrustRegionState,
    estimate_rho,
    model_decrement_test,
    project_ball_box,
    run,
    solve_subproblem,
    update_state,
    write_trace_csv,
)


def quad_model(A, b):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    return CallableSurrogate(lambda x: 0.5 * x @ A @ x + b @ x, lambda x: A @ x + b, dim=len(b))


# -- subproblem ------------------------------------------------------------------------------------------


def test_subproblem_interior_minimizer():
    A = np.array([[3.0, 0.5], [0.5, 1.0]])
    b = np.array([-0.3, 0.2])
    m = quad_model(A, b)
    star = np.linalg.solve(A, -b)
    m_star = m.predict(star)[0]
    # default stop: the last accepted gain is at most rtol of the total decrease
    s = solve_subproblem(m, np.zeros(2), 2.0, seed=0)
    assert m.predict(s)[0] - m_star <= 1e-6 * (m.predict(np.zeros(2))[0] - m_star)
    np.testing.assert_allclose(s, star, atol=1e-3)
    tight = solve_subproblem(m, np.zeros(2), 2.0, seed=0, rtol=0.0)
    np.testing.assert_allclose(tight, star, atol=1e-6)


def test_subproblem_linear_model_hits_boundary():
    g = np.array([1.0, -2.0, 0.5])
    m = CallableSurrogate(lambda x: g @ x, lambda x: g, dim=3)
    s = solve_subproblem(m, np.array([1.0, 1.0, 1.0]), 0.7, seed=1)
    np.testing.assert_allclose(s, -0.7 * g / np.linalg.norm(g), atol=1e-6)


def test_subproblem_constant_model():
    m = CallableSurrogate(lambda x: 4.0, lambda x: np.zeros(2), dim=2)
    np.testing.assert_array_equal(solve_subproblem(m, np.ones(2), 1.0, seed=2), np.zeros(2))


def test_subproblem_never_ascends_and_respects_radius():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(1, 4))
        A = rng.normal(size=(n, n))
        A = A + A.T
        m = quad_model(A, rng.normal(size=n))
        x = rng.normal(size=n)
        d = float(rng.uniform(0.1, 3.0))
        s = solve_subproblem(m, x, d, seed=int(rng.integers(1000)))
        assert np.linalg.norm(s) <= d * (1 + 1e-12)
        assert m.predict(x + s)[0] <= m.predict(x)[0]


def test_subproblem_rejects_nonpositive_radius():
    with pytest.raises(ValueError):
        solve_subproblem(quad_model(np.eye(1), [0.0]), np.zeros(1), 0.0)


@settings(max_examples=60)
@given(
    st.lists(st.floats(-10, 10), min_size=2, max_size=2),
    st.floats(0.01, 5.0),
    st.lists(st.floats(0.0, 3.0), min_size=2, max_size=2),
)
def test_projection_lands_in_the_feasible_set(y, radius, width):
    lo = -np.asarray(width)
    hi = np.asarray(width) + 0.5
    p = project_ball_box(np.array([y]), radius, lo, hi)[0]
    assert np.linalg.norm(p) <= radius * (1 + 1e-9)
    assert np.all(p >= lo - 1e-12) and np.all(p <= hi + 1e-12)
    again = project_ball_box(p[None, :], radius, lo, hi)[0]
    np.testing.assert_allclose(again, p, atol=1e-9)


# -- decrement test and ratio ----------------------------------------------------------------------------


def test_decrement_test_examples():
    assert not model_decrement_test(1.0, 1.0, 3.0, 0.5)
    assert model_decrement_test(2.0, 1.0, 2.0, 0.5)
    assert not model_decrement_test(1.0, 0.9, 0.5, 0.5)


def _plant(f):
    return ProblemSpec("p", 1, f)


def test_rho_examples():
    model = CallableSurrogate(lambda x: float(x[0] ** 2), dim=1)
    rng = np.random.default_rng(0)
    x, s = np.array([1.0]), np.array([-0.5])
    assert estimate_rho(_plant(lambda x: float(x[0] ** 2)), model, x, s, 1, rng).rho == pytest.approx(1.0)
    assert estimate_rho(_plant(lambda x: 3.0), model, x, s, 1, rng).rho == 0.0
    est = estimate_rho(_plant(lambda x: 0.5 * float(x[0] ** 2)), model, x, s, 1, rng)
    assert est.rho == pytest.approx(0.5)
    assert len(est.samples) == 2


def test_rho_averages_measurements():
    model = CallableSurrogate(lambda x: float(x[0] ** 2), dim=1)
    noisy = ProblemSpec("n", 1, lambda x: float(x[0] ** 2), noise_std=0.1)
    est = estimate_rho(noisy, model, np.array([1.0]), np.array([-1.0]), 3, np.random.default_rng(1))
    assert len(est.samples) == 6
    assert est.f0 == pytest.approx(np.mean([z for _, z in est.samples[:3]]))


def test_rho_requires_decrease():
    model = CallableSurrogate(lambda x: 0.0, dim=1)
    with pytest.raises(ValueError):
        estimate_rho(_plant(lambda x: 0.0), model, np.zeros(1), np.ones(1), 1, np.random.default_rng(0))


# -- state update ----------------------------------------------------------------------------------------


def test_update_state_rules():
    cfg = TrConfig(gamma_inc=3.0, gamma_dec=0.9, eta=0.5, beta_dec=0.6)
    st0 = TrustRegionState(x=np.zeros(2), delta=1.0)
    step = np.array([0.1, 0.0])
    acc = update_state(st0, 0.5, cfg, step)
    np.testing.assert_array_equal(acc.x, step)
    assert acc.delta == pytest.approx(3.0) and acc.k == 1
    rej = update_state(st0, 0.5 - 1e-12, cfg, step)
    np.testing.assert_array_equal(rej.x, st0.x)
    assert rej.delta == pytest.approx(0.9)
    skip = update_state(st0, None, cfg)
    assert skip.delta == pytest.approx(0.9)


def test_config_validation_lists_problems():
    with pytest.raises(ValueError, match="gamma_dec"):
        TrConfig(gamma_dec=1.5)
    with pytest.raises(ValueError, match="eta"):
        TrConfig(eta=0.7, beta_dec=0.6)
    errs = TrConfig().validation_errors()
    assert errs == []
    assert TrConfig().stop_radius == pytest.approx(3.5e-6)
    assert TrConfig.from_dict(TrConfig().to_dict()) == TrConfig()
    with pytest.raises(ValueError):
        TrConfig.from_dict({"nope": 1})


# -- outer loop ------------------------------------------------------------------------------------------


def test_run_converges_on_sphere():
    res = run(quadratic(2), TrConfig(delta0=1.0, max_iters=100), x0=[2.0, 2.0], seed=0)
    assert len(res.trace) <= 100
    assert np.linalg.norm(res.x_final) < 1e-2


def test_exact_nominal_means_every_tested_step_is_accepted():
    base = quadratic(2)
    exact = CallableSurrogate(base.f, base.grad, dim=2)
    from dataclasses import replace

    problem = replace(base, nominal=exact)
    cfg = TrConfig(surrogate_mode="mismatch", delta0=1.0, max_iters=30)
    res = run(problem, cfg, seed=0)
    tested = [r for r in res.trace if r.rho is not None]
    assert tested
    assert all(r.accepted and r.rho == pytest.approx(1.0) for r in tested)
    for a, b in zip(res.trace, res.trace[1:]):
        if a.rho is not None:
            assert b.delta == pytest.approx(a.delta * cfg.gamma_inc)


def quartic(noise):
    return ProblemSpec(
        "quartic", 1, lambda x: float((x[0] - 1) ** 4 + 0.5 * (x[0] - 1) ** 2),
        grad=lambda x: np.array([4 * (x[0] - 1) ** 3 + (x[0] - 1)]), noise_std=noise, x0=np.array([-1.0]),
    )


def test_noisy_quartic_best_so_far():
    p = quartic(0.01)
    res = run(p, TrConfig.analytic(max_iters=60), seed=4)
    best = np.minimum.accumulate([r.plant_value_estimate for r in res.trace])
    assert np.all(np.diff(best) <= 0)
    assert p.f(res.x_final) <= p.f(p.x0) + 3 * 0.01
    assert p.f(res.x_final) < 0.1


def test_trace_invariants():
    cfg = TrConfig.analytic(max_iters=80)
    res = run(quartic(0.01), cfg, seed=1)
    tr = res.trace
    for a, b in zip(tr, tr[1:]):
        ratio = b.delta / a.delta
        assert ratio == pytest.approx(cfg.gamma_inc) or ratio == pytest.approx(cfg.gamma_dec)
        if a.accepted:
            np.testing.assert_allclose(b.x, a.x + a.step)
        else:
            np.testing.assert_array_equal(b.x, a.x)
    for r in tr:
        assert r.plant_evals_used == (2 * cfg.rho_avg if r.rho is not None else 0)
        assert r.accepted == (r.rho is not None and r.rho >= cfg.eta)
    assert res.total_plant_evals == res.initial_evals + sum(r.plant_evals_used for r in tr)


def test_run_deterministic(tmp_path):
    p = quadratic(2, noise_std=0.05)
    cfg = TrConfig.analytic(max_iters=25)
    a, b = run(p, cfg, seed=9), run(p, cfg, seed=9)
    write_trace_csv(a.trace, tmp_path / "a.csv")
    write_trace_csv(b.trace, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c = run(p, cfg, seed=10)
    assert [r.plant_value_estimate for r in c.trace] != [r.plant_value_estimate for r in a.trace]


def test_trace_csv_schema(tmp_path):
    res = run(quadratic(2), TrConfig.analytic(max_iters=5), seed=0)
    path = tmp_path / "t.csv"
    write_trace_csv(res.trace, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == [
        "k", "x_1", "x_2", "delta", "s_1", "s_2", "model_decrement", "rho", "accepted", "plant_evals_used",
        "plant_value_estimate",
    ]
    assert len(rows) == 6


def test_mismatch_needs_nominal():
    with pytest.raises(ValueError):
        run(quadratic(2), TrConfig(surrogate_mode="mismatch"), seed=0)


def test_summary_record():
    res = run(quadratic(2), TrConfig.analytic(max_iters=10), seed=0)
    s = res.summary()
    assert s["iterations"] == 10
    assert s["total_plant_evals"] == res.total_plant_evals
    assert "final_grad_norm" in s

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gptr.certification import (
    FullLinearityConstants,
    InfeasibleConstantsError,
    alpha_lower_bound,
    certify_first_order,
    certify_zeroth_order,
    estimate_alpha,
    mismatch_bound,
    noisy_gp_builder,
    theorem2_radius_cap,
    union_bound_beta,
)
from gptr.gp import Dataset, fit
from gptr.kernel import Hyperparams
from gptr.surrogate import CallableSurrogate


def three_expressions(gi, gd):
    """Independent evaluation of the three candidates for the lower bound on alpha."""
    e2 = 1 - ((gi - 1) / gi) / (4 * ((gi - 1) / (2 * gi) + (1 - gd) / gd))
    e3 = 1 - (1 - gd) / (2 * (gi**2 - gd))
    return 0.5, e2, e3


def square():
    return lambda x: float(x[0] ** 2), lambda x: np.array([2.0 * x[0]])


ZERO = CallableSurrogate(lambda x: 0.0, lambda x: np.zeros(1), dim=1)


def test_alpha_bound_examples():
    assert alpha_lower_bound(2.0, 0.5) == pytest.approx(0.928571, abs=1e-6)
    assert alpha_lower_bound(3.0, 0.9) == pytest.approx(0.993827, abs=1e-6)
    assert three_expressions(2.0, 0.5)[1] == pytest.approx(0.9)
    assert three_expressions(3.0, 0.9)[1] == pytest.approx(0.625)


@given(st.floats(1.001, 20.0), st.floats(0.001, 0.999))
def test_alpha_bound_range_and_definition(gi, gd):
    a = alpha_lower_bound(gi, gd)
    assert 0.5 <= a < 1.0
    assert a == pytest.approx(max(three_expressions(gi, gd)), rel=1e-12)


def test_alpha_bound_rejects_bad_factors():
    for gi, gd in [(1.0, 0.5), (2.0, 1.0), (2.0, 0.0), (0.5, 0.5)]:
        with pytest.raises(ValueError):
            alpha_lower_bound(gi, gd)


def test_mismatch_bound_cases():
    th = Hyperparams(2.0, (1.0,))
    model = fit(Dataset([[0.0]], [1.0]), th)
    consts = FullLinearityConstants(beta_cap=4.0)
    assert mismatch_bound(model, [0.0], 1, consts) == pytest.approx(0.0, abs=1e-8)
    assert mismatch_bound(model, [100.0], 1, consts) == pytest.approx(2.0 * 2.0)
    # std 0.5 exactly: prior of an empty model with sigma_f = 0.5
    empty = fit(Dataset.empty(1), Hyperparams(0.5, (1.0,)))
    assert mismatch_bound(empty, [0.0], 1, consts) == pytest.approx(1.0)


def test_zeroth_order_examples():
    f, _ = square()
    exact = CallableSurrogate(f, dim=1)
    assert certify_zeroth_order(exact, f, [0.0], 1.0, 1.0).ratio == 0.0
    rep = certify_zeroth_order(ZERO, f, [0.0], 1.0, 1.0)
    assert rep.ratio == pytest.approx(1.0) and rep.passed
    rep = certify_zeroth_order(ZERO, f, [0.0], 1.0, 0.5)
    assert rep.ratio == pytest.approx(2.0) and not rep.passed


def test_first_order_examples():
    f, g = square()
    exact = CallableSurrogate(f, g, dim=1)
    assert certify_first_order(exact, g, [0.0], 1.0, 1.0).ratio == 0.0
    rep = certify_first_order(ZERO, g, [0.0], 1.0, 2.0)
    assert rep.ratio == pytest.approx(1.0) and rep.passed
    rep = certify_first_order(ZERO, g, [0.0], 1.0, 1.0)
    assert rep.ratio == pytest.approx(2.0) and not rep.passed


def test_certification_monotone_in_kappa():
    rng = np.random.default_rng(0)
    model = fit(Dataset(rng.uniform(-1, 1, size=(5, 1)), rng.normal(size=5)), Hyperparams(1.0, (2.0,)))
    f, g = square()
    for kappas in ([0.1, 0.5, 1.0, 5.0, 50.0],):
        zero = [certify_zeroth_order(model, f, [0.2], 0.7, k).passed for k in kappas]
        first = [certify_first_order(model, g, [0.2], 0.7, k).passed for k in kappas]
        for seq in (zero, first):
            assert all(not a or b for a, b in zip(seq, seq[1:]))


def test_report_text_record():
    f, _ = square()
    text = certify_zeroth_order(ZERO, f, [0.0], 1.0, 1.0, grid=16).to_text()
    assert "order = zeroth" in text
    assert "grid = 16" in text
    assert "passed = true" in text


def quad_builder(noise, n=15):
    th = Hyperparams(1.0, (0.5,), max(noise, 1e-3))
    return noisy_gp_builder(lambda x: float(x[0] ** 2), [0.0], 1.0, n, noise, th)


def test_estimate_alpha_extremes():
    f, g = square()
    generous = FullLinearityConstants(kappa_ef=1e3, kappa_eg=1e3)
    assert estimate_alpha(quad_builder(0.0, 30), f, [0.0], 1.0, generous, 10, 0, grad_oracle=g) == 1.0
    tiny = FullLinearityConstants(kappa_ef=1e-12, kappa_eg=1e-12)
    assert estimate_alpha(quad_builder(0.05), f, [0.0], 1.0, tiny, 10, 0, grad_oracle=g) == 0.0


def test_estimate_alpha_reproducible_and_monotone():
    f, g = square()
    values = []
    for k_ef in (1.0, 0.3, 0.1, 0.03, 0.01):
        c = FullLinearityConstants(kappa_ef=k_ef, kappa_eg=50.0)
        a = estimate_alpha(quad_builder(0.05), f, [0.0], 1.0, c, 40, 7, grad_oracle=g)
        assert a == estimate_alpha(quad_builder(0.05), f, [0.0], 1.0, c, 40, 7, grad_oracle=g)
        values.append(a)
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert values[0] > values[-1]


def test_estimate_alpha_noiseless_dense_in_class():
    # f is a draw-free member of the SE hypothesis space: a single kernel bump
    th = Hyperparams(1.0, (1.0,), 1e-6)
    f = lambda x: float(np.exp(-0.5 * x[0] ** 2))  # noqa: E731
    g = lambda x: np.array([-x[0] * np.exp(-0.5 * x[0] ** 2)])  # noqa: E731
    builder = noisy_gp_builder(f, [0.3], 0.5, 25, 0.0, th)
    c = FullLinearityConstants(kappa_ef=0.1, kappa_eg=0.5)
    assert estimate_alpha(builder, f, [0.3], 0.5, c, 100, 1, grad_oracle=g) >= 0.99


def test_theorem2_cap():
    c = FullLinearityConstants(gamma_lh=6.0, kappa_eg=4.0, kappa_ef=1.0, kappa_bhh=1.0)
    assert theorem2_radius_cap(c) == pytest.approx(1.0)
    c2 = FullLinearityConstants(gamma_lh=12.0, kappa_eg=4.0, kappa_ef=1.0, kappa_bhh=1.0)
    assert theorem2_radius_cap(c2) == pytest.approx(0.5)
    with pytest.raises(InfeasibleConstantsError):
        theorem2_radius_cap(FullLinearityConstants(kappa_eg=3.0, kappa_ef=1.0, kappa_bhh=1.0))


def test_constants_validation():
    with pytest.raises(ValueError):
        FullLinearityConstants(alpha=1.0)
    with pytest.raises(ValueError):
        FullLinearityConstants(kappa_ef=0.0)
    d = FullLinearityConstants().to_dict()
    assert FullLinearityConstants.from_dict(d) == FullLinearityConstants()


def test_union_bound_beta():
    assert math.sqrt(union_bound_beta(0.05)) == pytest.approx(1.959964, abs=1e-6)
    assert union_bound_beta(0.1, 100) > union_bound_beta(0.1, 1)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from svrgkit.certificates import (
    CSV_HEADER,
    bregman_gap,
    certify,
    closed_form_c0,
    compute_c_sequence,
    convex_variance_bound,
    gradient_dominance_check,
    msvrg_crossover,
    msvrg_nu_bar,
    msvrg_step_size,
    parse_fraction,
    sgd_step_size,
    sum_norm_inequality,
    theoretical_minibatch_params,
    theoretical_svrg_params,
    variance_diagnostic,
)
from svrgkit.oracle import ContractViolation
from svrgkit.problems import make_logistic, make_quadratic

# Reference values from a 50-digit recursion, frozen.
REFERENCE = [
    # (n, alpha, mu, L, b, m, eta, c0, gamma_n)
    (1000, 2 / 3, 0.25, 1.0, 1, 1333, 0.0025, 0.0099732912403955868, 0.0022445148052132369),
    (100, 1.0, 0.25, 1.0, 1, 1333, 0.0025, 0.0099732912403955868, 0.0022445148052132369),
    (50, 0.5, 0.3, 2.0, 1, 20, 0.021213203435596425, 0.087083888632460222, 0.017930047018311094),
    (1000, 2 / 3, 0.25, 1.0, 4, 333, 0.01, 0.0099597801454898794, 0.0089055791712920574),
]


@pytest.mark.parametrize("n, alpha, mu, L, b, m, eta, c0, gamma", REFERENCE)
def test_recursion_matches_high_precision_reference(n, alpha, mu, L, b, m, eta, c0, gamma):
    if b == 1:
        params = theoretical_svrg_params(n, L, alpha, mu)
    else:
        params = theoretical_minibatch_params(n, L, b, mu)
    assert params.m == m
    assert params.eta == pytest.approx(eta, rel=1e-14)
    c = compute_c_sequence(params.eta, params.beta, L, params.m, b)
    assert c.c0 == pytest.approx(c0, rel=1e-13)
    assert c.gamma_n == pytest.approx(gamma, rel=1e-12)
    assert c.valid and c.monotone


def test_theoretical_schedule_formulas():
    eta, beta, m = theoretical_svrg_params(1000, 2.0, 2 / 3, 0.25)
    assert eta == pytest.approx(0.25 / (2.0 * 100))
    assert beta == pytest.approx(2.0 / 10)
    assert m == 1333
    eta, beta, m = theoretical_minibatch_params(1000, 1.0, 10, 0.25)
    assert (eta, m) == (pytest.approx(0.025), 133)
    with pytest.raises(ContractViolation):
        theoretical_minibatch_params(1000, 1.0, 100, 0.25)
    with pytest.raises(ContractViolation):
        theoretical_svrg_params(1000, 1.0, 2 / 3, 1.5)


def test_stream_and_materialised_agree():
    a = compute_c_sequence(1e-3, 0.05, 1.0, 50_000, materialize=True)
    b = compute_c_sequence(1e-3, 0.05, 1.0, 50_000, materialize=False)
    assert b.c is None and a.c.shape == (50_001,)
    assert a.c0 == pytest.approx(b.c0, rel=1e-14)
    assert a.c1 == pytest.approx(b.c1, rel=1e-14)
    assert a.gamma_n == pytest.approx(b.gamma_n, rel=1e-12)
    assert a.c[-1] == 0.0 and a.c[1] == a.c1


@settings(max_examples=60)
@given(eta=st.floats(1e-5, 0.1), beta=st.floats(1e-3, 1.0), L=st.floats(0.1, 10.0),
       m=st.integers(1, 3000), b=st.integers(1, 8))
def test_recursion_matches_closed_form(eta, beta, L, m, b):
    c = compute_c_sequence(eta, beta, L, m, b)
    closed = closed_form_c0(eta, beta, L, m, b)
    assert c.c0 == pytest.approx(closed, rel=1e-12)
    assert c.monotone
    # the recorded minimum is the t = 0 term
    assert c.gamma[0] == c.gamma_n
    gamma0 = eta - c.c1 * eta / beta - eta * eta * L - 2 * c.c1 * eta * eta
    assert c.gamma_n == pytest.approx(gamma0, rel=1e-12, abs=1e-300)


def test_certificate_overflow_and_bad_input():
    with pytest.raises(OverflowError):
        compute_c_sequence(1.0, 1.0, 10.0, 10_000)
    with pytest.raises(ContractViolation):
        compute_c_sequence(-1.0, 1.0, 1.0, 10)
    with pytest.raises(ContractViolation):
        compute_c_sequence(0.1, 1.0, 1.0, 0)


def test_large_step_fails_certificate():
    c = compute_c_sequence(0.5, 1.0, 1.0, 100)
    assert not c.valid and c.gamma_n < 0


def test_certify_report_and_csv():
    rep = certify(1000, 1.0, 2 / 3, 1, 0.25)
    assert rep.valid and rep.meets_bound
    row = rep.csv_row()
    assert len(row) == len(CSV_HEADER)
    assert row[-1] == "true" and row[5] == 1333
    assert "valid      yes" in rep.to_text()
    assert certify(1000, 1.0, 2 / 3, 4, 0.25).meets_bound
    with pytest.raises(ContractViolation):
        certify(1000, 1.0, 0.5, 4, 0.25)


def test_parse_fraction():
    assert parse_fraction("2/3") == pytest.approx(2 / 3)
    assert parse_fraction("0.25") == 0.25
    with pytest.raises(ValueError):
        parse_fraction("two")


def test_sgd_and_msvrg_steps():
    assert sgd_step_size(2.0, 1.0, 2.0, 100) == pytest.approx(math.sqrt(2 * 2 / 4) / 10)
    n, L, sigma, gap, mu = 1000, 1.0, 1.0, 0.5, 0.25
    cross = msvrg_crossover(n, L, sigma, gap, mu)
    c = math.sqrt(gap / (2 * L * sigma ** 2))
    assert c / math.sqrt(cross) == pytest.approx(mu / (L * n ** (2 / 3)), rel=1e-12)
    eta, branch, eta_sgd, eta_svrg = msvrg_step_size(n, L, sigma, gap, cross / 4, mu)
    assert branch == "sgd" and eta == eta_sgd > eta_svrg
    eta, branch, eta_sgd, eta_svrg = msvrg_step_size(n, L, sigma, gap, cross * 4, mu)
    assert branch == "svrg" and eta == eta_svrg > eta_sgd


def test_msvrg_nu_bar():
    assert msvrg_nu_bar(0.25, 1 / 40) == pytest.approx(max(2 * (1 / 40) / 0.25, 0.25 / (2 / 40)))


points = arrays(np.float64, 3, elements=st.floats(-4, 4))


@settings(max_examples=40)
@given(points, points, st.integers(1, 3))
def test_variance_bound_property(x, xs, b):
    problem = make_logistic(6, 3, lambda_r=0.4, seed=0)
    diag = variance_diagnostic(problem, x, xs, b)
    assert diag.exact and diag.batches == 6 ** b
    assert diag.mean_sq <= diag.bound + 1e-9
    assert diag.variance >= -1e-12


@settings(max_examples=40)
@given(points, points)
def test_convex_variance_bound_property(x, xs):
    problem = make_quadratic(7, 3, 0.1, seed=1)
    lhs, rhs = convex_variance_bound(problem, x, xs)
    assert lhs <= rhs + 1e-9


def test_variance_diagnostic_mean_is_full_gradient(logistic, rng):
    x, xs = rng.normal(size=logistic.d), rng.normal(size=logistic.d)
    diag = variance_diagnostic(logistic, x, xs, 1)
    g = logistic.gradient(x)
    # E||v||^2 = ||E v||^2 + Var and E v = grad f(x)
    assert diag.mean_sq - diag.variance == pytest.approx(float(g @ g), rel=1e-10)


def test_variance_diagnostic_modes(logistic, rng):
    x, xs = rng.normal(size=logistic.d), rng.normal(size=logistic.d)
    full = variance_diagnostic(logistic, x, xs, full_batch=True)
    g = logistic.gradient(x)
    assert full.mean_sq == pytest.approx(float(g @ g), rel=1e-10)
    with pytest.raises(ContractViolation):
        variance_diagnostic(logistic, x, xs, 6, max_enumeration=1000)
    exact = variance_diagnostic(logistic, x, xs, 2)
    mc = variance_diagnostic(logistic, x, xs, 2, monte_carlo=True, max_enumeration=10, samples=20000)
    assert not mc.exact
    assert abs(mc.mean_sq - exact.mean_sq) < 5 * mc.stderr


@settings(max_examples=40)
@given(points, points, st.integers(0, 6))
def test_bregman_inequality(x, y, i):
    problem = make_quadratic(7, 3, 0.1, seed=2)
    lhs, rhs = bregman_gap(problem, i, x, y)
    assert lhs <= rhs + 1e-9


@given(st.lists(arrays(np.float64, 3, elements=st.floats(-1e3, 1e3)), min_size=1, max_size=8))
def test_sum_norm_inequality(zs):
    lhs, rhs = sum_norm_inequality(zs)
    assert lhs <= rhs * (1 + 1e-12) + 1e-9


def test_gradient_dominance_check(rng):
    q = make_quadratic(20, 4, 0.1, seed=3)
    pts = [rng.normal(size=4) for _ in range(30)] + [q.x_star]
    rep = gradient_dominance_check(q, q.tau, pts)
    assert rep.passed and rep.checked == 30 and rep.skipped == 1
    assert not gradient_dominance_check(q, 0.01 * q.tau, pts).passed
    # only a lower bound on f* is known for logistic problems
    assert gradient_dominance_check(make_logistic(10, 3), 100.0, [np.ones(3)]).passed is None

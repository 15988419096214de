import itertools
import math
from fractions import Fraction

import attr
import numpy as np
import pytest

from gtprune import (
    ConstantsProfile,
    DomainError,
    IntegerInterval,
    LogSpaceNumber,
    Seed,
    UsageError,
    D_interval,
    bound_M0,
    bound_M1,
    bound_W,
    bucket_bounds,
    intersect_prob_exact,
    intersect_prob_fraction,
    intersect_prob_product,
    log_iter,
    log_star,
    n_next_formula,
    paper_chain,
    r_formula,
    s_formula,
    s_formula_log2,
    simulate_intersection_frequency,
    success_lower_bound,
    theorem_collapse_check,
)
from gtprune.reduction import ReductionParams

HUGE = LogSpaceNumber.pow2(65536)
PAPER_TAU_5 = ConstantsProfile.paper(5)


def level_params(n, n_i, log_value, j, profile, s_i=1.0, bucket_total=None):
    params = ReductionParams(
        level=1,
        universe_size=n,
        n_i=n_i,
        s_i=s_i,
        log_value=log_value,
        bucket_total=bucket_total or j + 1,
        interval=IntegerInterval(1, n),
        delta=1 / 3,
        profile=profile,
    )
    return params.with_bucket(j)


@pytest.mark.parametrize(
    "n,k,expected",
    [
        (65536, 2, 4.0),
        (65536, 1, 16.0),
        (100, 0, 100.0),
        (HUGE, 1, 65536.0),
        (HUGE, 3, 4.0),
        ("pow2:65536", 5, 1.0),
    ],
)
def test_log_iter(n, k, expected):
    assert log_iter(n, k) == expected


@pytest.mark.parametrize("n,k", [(4, 3), (2, 2), (HUGE, 6)])
def test_log_iter_leaves_domain(n, k):
    # log^[k] hits 0 and the next logarithm is undefined
    with pytest.raises(DomainError):
        log_iter(n, k + 1)


def test_log_iter_rejects_negative_depth():
    with pytest.raises(UsageError):
        log_iter(16, -1)


@pytest.mark.parametrize(
    "n,expected",
    [
        (2, 1),
        (3, 1),
        (4, 2),
        (16, 3),
        (65536, 4),
        (HUGE, 5),
        (LogSpaceNumber.pow2(1e6), 5),
    ],
)
def test_log_star(n, expected):
    assert log_star(n) == expected


@pytest.mark.parametrize("n", [1, 0.5])
def test_log_star_rejects_small_values(n):
    with pytest.raises(DomainError):
        log_star(n)


@pytest.mark.parametrize(
    "text,log2,exact",
    [
        ("65536", 16.0, 65536),
        ("pow2:20", 20.0, 1 << 20),
        pytest.param("pow2:65536", 65536.0, 1 << 65536, id="pow2:65536"),
        ("pow2:1e6", 1e6, None),
        (12, math.log2(12), 12),
    ],
)
def test_log_space_number_parse(text, log2, exact):
    number = LogSpaceNumber.parse(text)
    assert number.log2 == log2
    assert number.exact == exact


@pytest.mark.parametrize("text", ["", "abc", "pow2:", "pow2:x", "1.5"])
def test_log_space_number_parse_rejects_garbage(text):
    with pytest.raises(UsageError) as e:
        LogSpaceNumber.parse(text)
    assert e.value.code == "invalid_universe_size"


def test_log_space_number_arithmetic():
    a = LogSpaceNumber.of(48)
    b = LogSpaceNumber.of(6)
    assert (a / b).exact == 8
    assert (a * b).exact == 288
    assert (a * b).log2 == pytest.approx(math.log2(288), rel=1e-9)
    assert (HUGE / HUGE).log2 == 0.0
    assert (b ** 3).log2 == pytest.approx(math.log2(216), rel=1e-9)
    assert b < a <= a


def test_log_space_number_not_representable():
    with pytest.raises(DomainError):
        HUGE.to_float()
    assert str(HUGE) == "pow2:65536"
    assert str(LogSpaceNumber.of(1000)) == "1000"


def test_s_formula_paper_value():
    expected = 65536 / 2400 ** 6
    assert s_formula(HUGE, 1, 5, PAPER_TAU_5) == pytest.approx(expected, rel=1e-9)
    assert s_formula(HUGE, 1, 5, PAPER_TAU_5) == pytest.approx(3.43e-16, rel=1e-2)


def test_s_formula_unit_denominator():
    profile = ConstantsProfile.generalized(c_base=0.2, tau_floor=1.0)
    assert s_formula(65536, 1, 5, profile) == pytest.approx(16.0)
    assert s_formula(65536, 2, 5, profile) == pytest.approx(4.0)


def test_s_formula_ratio_matches_threshold_recursion():
    profile = attr.evolve(PAPER_TAU_5, tau_floor=1.0)
    for i in (1, 2, 3):
        ratio = s_formula(HUGE, i + 1, 5, profile) / s_formula(HUGE, i, 5, profile)
        expected = log_iter(HUGE, i + 1) / log_iter(HUGE, i) * 2400
        assert ratio == pytest.approx(expected, rel=1e-9)


def test_s_formula_below_floor():
    with pytest.raises(DomainError) as e:
        s_formula(HUGE, 3, 5, PAPER_TAU_5)
    assert e.value.code == "below_floor"


def test_r_formula_paper_value():
    assert r_formula(HUGE, 1, PAPER_TAU_5) == 256


def test_r_formula_forced_singleton():
    profile = ConstantsProfile.generalized(bucket_divisor=65536 / 16)
    assert r_formula(HUGE, 1, profile) == 1


def test_lowest_bucket_endpoint_matches_interval():
    # n_i / L**(4 r) == n_i / (log^[i-1] n)**(1/4) in log-space
    r = r_formula(HUGE, 1, PAPER_TAU_5)
    log_value = log_iter(HUGE, 1)
    assert 4 * r * math.log2(log_value) == pytest.approx(HUGE.log2 / 4, rel=1e-12)


def test_n_next_formula():
    profile = ConstantsProfile.paper(4)
    assert n_next_formula(2 ** 20, 16, 0, profile) == 4096
    low, high = bucket_bounds(2 ** 20, 16, 0)
    assert low < n_next_formula(2 ** 20, 16, 0, profile) < high
    for j in range(3):
        low, high = bucket_bounds(2 ** 40, 3.5, j)
        assert low < n_next_formula(2 ** 40, 3.5, j, profile) < high


def test_n_next_formula_near_one():
    profile = ConstantsProfile.paper(4)
    assert n_next_formula(1000.0, 1 + 1e-12, 0, profile) == pytest.approx(1000.0)
    with pytest.raises(UsageError):
        n_next_formula(1000.0, 1.0, 0, profile)


@pytest.mark.parametrize(
    "n,expected",
    [
        (2 ** 20, IntegerInterval(1, 32)),
        (2 ** 16, IntegerInterval(1, 16)),
        (2 ** 12, IntegerInterval(1, 8)),
        (10 ** 4, IntegerInterval(1, 10)),
    ],
)
def test_D_interval_first_level(n, expected):
    assert D_interval(n, n, 1) == expected



def test_D_interval_second_level():
    assert D_interval(2 ** 20, 4096, 2) == IntegerInterval(256, 541)


def test_D_interval_uses_profile_exponent():
    profile = ConstantsProfile.generalized()
    assert D_interval(2 ** 16, 2 ** 16, 1, profile=profile) == IntegerInterval(1, 256)
    assert D_interval(2 ** 16, 4096, 2, profile=profile) == IntegerInterval(16, 64)


def test_D_interval_rejects_large_n_i():
    with pytest.raises(UsageError):
        D_interval(100, 200, 1)


@pytest.mark.parametrize(
    "n,d,q,expected",
    [
        (4, 1, 1, 0.25),
        (5, 2, 2, 0.7),
        (7, 3, 7, 1.0),
        (7, 3, 0, 0.0),
        (10, 10, 1, 1.0),
    ],
)
def test_intersect_prob_exact_examples(n, d, q, expected):
    assert intersect_prob_exact(n, d, q) == pytest.approx(expected, abs=1e-15)
    assert intersect_prob_product(n, d, q) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("n,d,q", [(5, 0, 1), (5, 6, 1), (5, 1, -1), (5, 1, 6)])
def test_intersect_prob_rejects_out_of_range(n, d, q):
    with pytest.raises(UsageError):
        intersect_prob_exact(n, d, q)


def test_intersect_prob_matches_enumeration():
    for n in range(1, 13):
        for d in range(1, n + 1):
            # An item below q in a d-subset means the subset meets {0..q-1}
            minima = np.array([min(c) for c in itertools.combinations(range(n), d)])
            for q in range(n + 1):
                hits = int(np.count_nonzero(minima < q))
                expected = Fraction(hits, minima.size)
                assert intersect_prob_fraction(n, d, q) == expected
                assert intersect_prob_exact(n, d, q) == pytest.approx(float(expected), abs=1e-12)


def test_product_form_matches_binomial_ratio():
    rng = Seed(2024).generator()
    for _ in range(200):
        n = int(rng.integers(1, 2001))
        d = int(rng.integers(1, n + 1))
        q = int(rng.integers(0, n + 1))
        exact = intersect_prob_exact(n, d, q)
        assert intersect_prob_product(n, d, q) == pytest.approx(exact, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize(
    "n,d,q",
    [(10 ** 4, 50, 100), (10 ** 5, 300, 40), (10 ** 6, 1000, 2000), (5000, 2500, 2499)],
)
def test_log_gamma_path_matches_product_form(n, d, q):
    assert intersect_prob_exact(n, d, q) == pytest.approx(
        intersect_prob_product(n, d, q), rel=1e-6
    )


def test_intersect_prob_is_monotone():
    n = 60
    table = np.array(
        [[intersect_prob_exact(n, d, q) for q in range(n + 1)] for d in range(1, n + 1)]
    )
    assert (np.diff(table, axis=0) >= -1e-15).all()
    assert (np.diff(table, axis=1) >= -1e-15).all()


def test_monte_carlo_matches_exact_probability():
    n, d, q, trials = 10 ** 4, 50, 100, 10 ** 5
    exact = intersect_prob_exact(n, d, q)
    sigma = math.sqrt(exact * (1 - exact) / trials)
    within = sum(
        abs(simulate_intersection_frequency(n, d, q, trials, Seed(31, (batch,))) - exact)
        <= 3 * sigma
        for batch in range(100)
    )
    assert within >= 98


def test_bounds_vanish_without_tests():
    params = level_params(4096, 4096.0, 12.0, 0, ConstantsProfile.generalized())
    assert bound_M0(params, 10, 0.0, params.profile).value == 0.0
    assert bound_M1(params, 10, 0.0, params.profile).value == 0.0


def test_bound_M0_dominates_single_test_probability():
    params = level_params(4096, 4096.0, 12.0, 0, ConstantsProfile.generalized())
    q = math.floor(params.low_threshold)
    for d in (1, 5, 20, 100, 700, 2048):
        assert bound_M0(params, d, 1.0, params.profile).value >= intersect_prob_exact(4096, d, q)


def test_bound_M0_requires_small_defective_set():
    params = level_params(4096, 4096.0, 12.0, 0, ConstantsProfile.generalized())
    with pytest.raises(UsageError):
        bound_M0(params, 2049, 1.0, params.profile)


@pytest.mark.parametrize("s_i,expected", [(0.5, 0.5), (3.0, 1.0)])
def test_bound_M1_vacuous_exponent(s_i, expected):
    params = level_params(4096, 4096.0, 12.0, 0, ConstantsProfile.generalized())
    assert bound_M1(params, 0, s_i, params.profile).value == expected


def test_bound_M1_paper_exponent_at_lower_endpoint():
    n = 2 ** 20
    profile = ConstantsProfile.paper(log_star(n))
    params = level_params(n, float(n), 20.0, 0, profile, s_i=0.25)
    d = round(n / n_next_formula(params.n_i, params.log_value, 0, profile))
    assert d == 400
    estimate = bound_M1(params, d, params.s_i, profile)
    assert estimate.value == pytest.approx(0.25 * math.exp(-400.0), rel=1e-9)
    assert math.log2(estimate.value) == pytest.approx(estimate.closed_form_log2, rel=1e-9)
    assert estimate.holds


@pytest.mark.parametrize(
    "profile,expected",
    [
        (PAPER_TAU_5, 1 / 150),
        (ConstantsProfile.generalized(markov_slack=2.0), 0.5),
        (ConstantsProfile.generalized(markov_slack=1e12), 1e-12),
    ],
)
def test_bound_W(profile, expected):
    assert bound_W(profile) == pytest.approx(expected)


def test_bound_W_requires_slack_above_one():
    with pytest.raises(UsageError):
        bound_W(ConstantsProfile.generalized(markov_slack=1.0))


@pytest.mark.parametrize(
    "delta,m0,m1,w,expected",
    [
        (1 / 3, 0.0, 0.0, 0.0, 2 / 3),
        (1 / 3, 1 / 1500, 1 / 1500, 1 / 150, 0.6586666666666667),
        (0.9, 0.5, 0.0, 0.0, 0.0),
    ],
)
def test_success_lower_bound(delta, m0, m1, w, expected):
    assert success_lower_bound(delta, m0, m1, w) == pytest.approx(expected)


def test_success_lower_bound_rejects_non_probabilities():
    with pytest.raises(UsageError):
        success_lower_bound(1.5, 0.0, 0.0, 0.0)


def test_paper_step_budget_fits_level_allowance():
    tau = 5
    assert 12 / (300 * tau) <= 1 / (12 * tau)


@pytest.mark.parametrize("n,tau,levels", [(HUGE, 5, 2), (LogSpaceNumber.of(2 ** 16), 4, 2)])
def test_paper_chain_holds(n, tau, levels):
    checks = paper_chain(n)
    assert [check.level for check in checks] == list(range(1, levels + 1))
    for check in checks:
        assert check.log_value >= tau
        assert check.limit_log2 == pytest.approx(-math.log2(300 * tau))
        assert check.m0_holds
        assert check.m1_holds
        assert check.budget_holds
        assert check.holds


def test_paper_chain_closed_forms():
    first = paper_chain(HUGE)[0]
    base = math.log2(2400)
    assert first.r == 256
    assert first.s_log2 == pytest.approx(16 - 6 * base, abs=1e-9)
    assert first.m0_closed_log2 == pytest.approx(1 - 6 * base - 12, abs=1e-9)
    assert first.w_bound == pytest.approx(1 / 150)


def test_theorem_collapse_check_huge_universe():
    report = theorem_collapse_check(HUGE)
    base = math.log2(2400)
    assert report.ok, report.anomalies
    assert report.tau == 5
    assert report.level == 3
    assert report.level <= report.tau
    assert report.m_log2 == pytest.approx(16 - 6 * base, abs=1e-9)
    assert report.m == pytest.approx(65536 / 2400 ** 6, rel=1e-9)
    assert report.s < 1
    assert report.s_log2 <= math.log2(5) - 2 * base + 1e-9
    unfloored = attr.evolve(PAPER_TAU_5, tau_floor=1.0)
    assert report.s_log2 == pytest.approx(s_formula_log2(HUGE, 3, 5, unfloored), abs=1e-9)
    assert report.budget == pytest.approx(2 / 3 - 3 / 60)
    assert report.budget >= 7 / 12


def test_theorem_collapse_check_smallest_universe():
    report = theorem_collapse_check(2 ** 16)
    assert report.ok, report.anomalies
    assert (report.tau, report.level) == (4, 2)
    assert report.budget == pytest.approx(2 / 3 - 2 / 48)


def test_theorem_collapse_check_reports_anomalies():
    report = theorem_collapse_check(2 ** 16, ConstantsProfile.generalized(c_base=0.01))
    assert not report.ok
    assert any("not below 1" in anomaly for anomaly in report.anomalies)


def test_theorem_collapse_check_rejects_small_universe():
    with pytest.raises(UsageError):
        theorem_collapse_check(2 ** 15)

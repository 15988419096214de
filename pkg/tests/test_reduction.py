import math

import attr
import numpy as np
import pytest

from gtprune import (
    FAIL,
    BucketSelection,
    ConstantsProfile,
    IntegerInterval,
    ItemSet,
    Prediction,
    ReductionParams,
    Seed,
    UsageError,
    bernoulli_estimator,
    bucket_bounds,
    choose_bucket,
    classify_test,
    constant_decoder,
    deterministic_strategy,
    empty_strategy,
    fixed_size_strategy,
    initial_params,
    intersect_prob_exact,
    iterate_reduction,
    measure_events,
    partition_counts,
    partition_sizes,
    reduce_once,
    run_strategy,
    sample_defective_set,
    select_bucket,
)

GENERALIZED = ConstantsProfile.generalized()
PAPER_STEP = ConstantsProfile.generalized(bucket_exponent_step=4.0, bucket_divisor=16.0)


def make_params(n, n_i, log_value, bucket_total, profile=GENERALIZED, **kwargs):
    return ReductionParams(
        level=1,
        universe_size=n,
        n_i=n_i,
        s_i=kwargs.pop("s_i", 10.0),
        log_value=log_value,
        bucket_total=bucket_total,
        interval=kwargs.pop("interval", IntegerInterval(1, n)),
        delta=1 / 3,
        profile=profile,
        **kwargs,
    )


@pytest.fixture
def small_params():
    # n = 4096, generalized profile: a single bucket (28.44, 4096], D_2 = [12, 41]
    strategy = empty_strategy(4096, 1)
    return initial_params(strategy, GENERALIZED).with_bucket(0)


def test_bucket_bounds_example():
    assert bucket_bounds(2 ** 20, 16, 0) == (16.0, 1048576.0)


@pytest.mark.parametrize("n_i,log_value,j", [(2 ** 20, 16, 0), (1e9, 3.7, 1), (5e5, 1.5, 3)])
def test_bucket_bounds_ratio_and_telescoping(n_i, log_value, j):
    low, high = bucket_bounds(n_i, log_value, j)
    assert high / low == pytest.approx(log_value ** 4, rel=1e-12)
    assert bucket_bounds(n_i, log_value, j + 1)[1] == pytest.approx(low, rel=1e-12)


@pytest.mark.parametrize("log_value,j", [(1.0, 0), (0.5, 0), (4.0, -1)])
def test_bucket_bounds_rejects_invalid_arguments(log_value, j):
    with pytest.raises(UsageError):
        bucket_bounds(1024, log_value, j)


def test_partition_counts_without_tests():
    params = make_params(2 ** 20, 2.0 ** 20, 16.0, 2, PAPER_STEP)
    histogram = partition_counts([], params)
    assert histogram.counts == (0, 0)
    assert histogram.overflow == 0
    assert histogram.total == 0


def test_partition_sizes_example():
    params = make_params(2 ** 20, 2.0 ** 20, 16.0, 2, PAPER_STEP)
    histogram = partition_sizes([20, 300, 5000], params)
    assert histogram.counts == (3, 0)
    assert histogram.overflow == 0


def test_partition_counts_of_item_sets():
    params = make_params(64, 64.0, 2.0, 2)
    # Edges 64, 16, 4: bucket 0 = [16, 64], bucket 1 = [4, 16)
    tests = [ItemSet.from_indices(64, range(size)) for size in (0, 3, 4, 15, 16, 64)]
    histogram = partition_counts(tests, params)
    assert histogram.counts == (2, 2)
    assert histogram.interior == (0, 1)
    assert histogram.overflow == 2
    assert histogram.total == len(tests)


def test_bucket_coverage():
    profile = ConstantsProfile.generalized(bucket_divisor=1.0)
    params = initial_params(bernoulli_estimator(2 ** 16, 1), profile)
    low, high = params.covered_range
    sizes = np.arange(math.ceil(low), int(high) + 1)
    histogram = partition_sizes(sizes, params)
    assert histogram.overflow == 0
    assert sum(histogram.counts) == sizes.size

    edges = params.edges()
    sizes_to_check = {int(math.floor(e)) + k for e in edges for k in (-1, 0, 1)}
    sizes_to_check.update(range(0, 50))
    for size in sorted(sizes_to_check):
        single = partition_sizes([size], params)
        inside = low <= size <= high
        assert sum(single.counts) == int(inside)
        assert single.overflow == int(not inside)


@pytest.mark.parametrize(
    "means,expected",
    [
        ([5.0, 0.0, 2.0], 1),
        ([1.0, 1.0, 1.0], 0),
        ([3.0, 2.0, 2.0, 7.0], 1),
        ([0.5], 0),
    ],
)
def test_choose_bucket(means, expected):
    assert choose_bucket(means) == expected


def test_choose_bucket_without_buckets():
    with pytest.raises(UsageError):
        choose_bucket([])


def test_select_bucket_breaks_ties_toward_smallest_index():
    # Edges 1024, 256, 64, 16, 4: size 20 sits in bucket 2
    params = make_params(1024, 1024.0, 2.0, 4)
    tests = [ItemSet.from_indices(1024, range(20)) for _ in range(3)]
    strategy = deterministic_strategy(1024, tests, constant_decoder(1))
    selection = select_bucket(strategy, params, 10, Seed(0))
    assert selection.means == (0.0, 0.0, 3.0, 0.0)
    assert selection.bucket == 0
    assert selection.expected_residual == 0.0
    assert selection.confidence_interval == (0.0, 0.0)


def test_select_bucket_markov_bound():
    profile = ConstantsProfile.generalized(bucket_divisor=1.0)
    strategy = bernoulli_estimator(2 ** 16, 15)
    params = initial_params(strategy, profile)
    assert params.bucket_total == 4
    selection = select_bucket(strategy, params, 200, Seed(1))
    assert selection.samples == 200
    assert selection.markov_bound_holds
    assert min(selection.means) == selection.expected_residual
    assert selection.expected_residual <= selection.mean_in_range / params.bucket_total


def test_select_bucket_is_reproducible():
    strategy = bernoulli_estimator(4096, 5)
    params = initial_params(strategy, ConstantsProfile.generalized(bucket_divisor=1.0))
    assert select_bucket(strategy, params, 20, Seed(4)) == select_bucket(
        strategy, params, 20, Seed(4)
    )


@pytest.mark.parametrize(
    "size,expected",
    [
        (10, Prediction.PREDICTED_0),
        (16, Prediction.PREDICTED_0),
        (17, Prediction.RESIDUAL),
        (100, Prediction.RESIDUAL),
        (4095, Prediction.RESIDUAL),
        (4096, Prediction.PREDICTED_1),
        (5000, Prediction.PREDICTED_1),
    ],
)
def test_classify_test(size, expected):
    params = make_params(
        8192, 4096.0, 4.0, 1, bucket=0, low_threshold=16.0, high_threshold=4096.0
    )
    assert classify_test(ItemSet.from_indices(8192, range(size)), params) is expected


def test_thresholds_must_be_ordered():
    with pytest.raises(UsageError) as e:
        make_params(100, 100.0, 4.0, 1, bucket=0, low_threshold=50.0, high_threshold=20.0)
    assert e.value.code == "invalid_thresholds"
    with pytest.raises(UsageError):
        make_params(100, 100.0, 4.0, 1, bucket=0, low_threshold=5.0, high_threshold=200.0)


def test_reduce_once_requires_selected_bucket():
    params = initial_params(empty_strategy(4096, 1), GENERALIZED)
    with pytest.raises(UsageError) as e:
        reduce_once(empty_strategy(4096, 1), params, 10.0)
    assert e.value.code == "bucket_not_selected"


def test_reduce_once_rejects_negative_budget(small_params):
    with pytest.raises(UsageError):
        reduce_once(empty_strategy(4096, 1), small_params, -1.0)


def test_reduce_once_next_level(small_params):
    _, following = reduce_once(empty_strategy(4096, 1), small_params, 7.0)
    assert following.level == 2
    assert following.s_i == 7.0
    assert following.n_i == pytest.approx(4096 / 12)
    assert following.log_value == pytest.approx(math.log2(12))
    assert following.interval == IntegerInterval(12, 41)
    assert following.interval.issubset(small_params.interval)
    assert following.delta == small_params.delta
    assert not following.interval_clipped


def test_paper_profile_adds_level_allowance(small_params):
    paper = attr.evolve(small_params, profile=ConstantsProfile.paper(4))
    paper = paper.with_bucket(0)
    _, following = reduce_once(empty_strategy(4096, 1), paper, 0.5)
    assert following.delta == pytest.approx(paper.delta + 1 / 48)


def test_all_predicted_one_strategy_performs_no_tests(small_params):
    def all_positive(answers):
        return 1 if answers.size == 3 and answers.all() else FAIL

    tests = [ItemSet.full(4096)] * 3
    strategy = deterministic_strategy(4096, tests, all_positive)
    reduced, _ = reduce_once(strategy, small_params, 5.0)
    for k in range(3):
        assert reduced.generate(Seed(k)) == []
        defective = sample_defective_set(4096, 5, Seed(9, (k,)))
        assert run_strategy(reduced, defective, Seed(k)) == 1


def test_overfull_residual_bucket_always_fails(small_params):
    strategy = fixed_size_strategy(4096, [100, 200, 300], constant_decoder(20))
    reduced, _ = reduce_once(strategy, small_params, 2.0)
    for k in range(5):
        draw = reduced.draw(Seed(k))
        assert draw.failed
        assert draw.tests == []
        defective = sample_defective_set(4096, 1 + k, Seed(3, (k,)))
        assert run_strategy(reduced, defective, Seed(k)) == FAIL


def test_residual_tests_keep_their_sizes(small_params):
    strategy = bernoulli_estimator(4096, 4)
    reduced, _ = reduce_once(strategy, small_params, 1000.0)
    draw = reduced.draw(Seed(12))
    inner_sizes = draw.inner.sizes()
    assert [len(t) for t in draw.tests] == inner_sizes[draw.residual_indices].tolist()
    assert draw.sizes().tolist() == [len(t) for t in draw.tests]
    low, high = small_params.thresholds()
    assert all(low < len(t) < high for t in draw.tests)
    histogram = partition_sizes(inner_sizes, small_params)
    assert draw.residual_count == histogram.interior[0]


def test_reduced_draw_is_reproducible(small_params):
    reduced, _ = reduce_once(bernoulli_estimator(4096, 4), small_params, 1000.0)
    first = reduced.generate(Seed(5))
    assert first == reduced.generate(Seed(5))
    assert first != reduced.generate(Seed(6))


def test_no_predicted_zero_tests_means_no_m0(small_params):
    strategy = fixed_size_strategy(4096, [4096], constant_decoder(20))
    events = measure_events(strategy, small_params, 10.0, 20, 200, Seed(0))
    assert events.m0 == 0
    assert events.p_m0 == 0.0


def test_whole_universe_test_never_misses(small_params):
    strategy = fixed_size_strategy(4096, [4096], constant_decoder(20))
    events = measure_events(strategy, small_params, 10.0, 12, 200, Seed(1))
    assert events.m1 == 0
    assert events.w == 0
    # Nothing is asked and the constant decoder answers 20 either way
    assert events.success_prev == events.success_next == 1.0


def test_single_predicted_zero_test_matches_hypergeometric(small_params):
    q, d, trials = 20, 20, 2000
    strategy = fixed_size_strategy(4096, [q], constant_decoder(d))
    events = measure_events(strategy, small_params, 10.0, d, trials, Seed(2))
    exact = intersect_prob_exact(4096, d, q)
    assert abs(events.p_m0 - exact) <= 3 * math.sqrt(exact * (1 - exact) / trials)


@pytest.mark.parametrize("d", [11, 42, 3000])
def test_measure_events_requires_d_in_next_interval(small_params, d):
    strategy = fixed_size_strategy(4096, [4096], constant_decoder(20))
    with pytest.raises(UsageError):
        measure_events(strategy, small_params, 10.0, d, 10, Seed(0))


def test_degradation_holds_per_trial(small_params):
    strategy = bernoulli_estimator(4096, 15)
    events = measure_events(strategy, small_params, 400.0, 30, 300, Seed(3), alpha=4.0)
    assert events.trials == 300
    assert events.identity_violations == 0
    assert events.equivalence_violations == 0
    assert events.degradation_gap() >= 0
    assert events.degradation_holds()


def test_tight_budget_degradation(small_params):
    strategy = bernoulli_estimator(4096, 15)
    s_next = 100.0
    events = measure_events(strategy, small_params, s_next, 20, 300, Seed(4), alpha=8.0)
    assert 0 < events.w < events.trials
    assert events.next_failures == events.w
    assert events.degradation_gap() >= 0


def test_measure_events_does_not_depend_on_workers(small_params):
    strategy = bernoulli_estimator(4096, 6)
    serial = measure_events(strategy, small_params, 200.0, 25, 60, Seed(5))
    parallel = measure_events(strategy, small_params, 200.0, 25, 60, Seed(5), workers=4)
    assert serial == parallel


def test_degradation_against_baseline():
    n = 2 ** 16
    strategy = bernoulli_estimator(n, 15)
    params = initial_params(strategy, GENERALIZED)
    selection = select_bucket(strategy, params, 200, Seed(6))
    params = params.with_bucket(selection.bucket)
    s_next = GENERALIZED.markov_slack * selection.expected_residual
    _, following = reduce_once(strategy, params, s_next)
    assert following.interval == IntegerInterval(16, 64)

    d = following.interval.sample(Seed(7))
    events = measure_events(strategy, params, s_next, d, 2000, Seed(8), alpha=8.0, workers=4)
    assert events.trials == 2000
    assert events.success_prev >= 0.9
    assert events.degradation_holds(tolerance=0.03)
    assert events.identity_violations == 0
    assert events.equivalence_violations == 0


def test_empty_strategy_collapses_at_first_level():
    result = iterate_reduction(empty_strategy(4096, 1), GENERALIZED, 5, 10, Seed(0), samples=5)
    assert result.collapsed
    assert result.final_level == 1
    assert result.stop_reason == "collapse"
    assert len(result.levels) == 1
    events = result.levels[0].events
    assert events is not None
    assert (events.m0, events.m1, events.w) == (0, 0, 0)


def test_cascade_nesting():
    result = iterate_reduction(
        bernoulli_estimator(2 ** 16, 15), GENERALIZED, 8, 20, Seed(8), alpha=8.0, samples=30
    )
    assert not result.collapsed
    assert result.stop_reason == "floor"
    assert result.final_level == 2
    (level,) = result.levels
    assert level.nested
    assert not level.following.interval_clipped
    assert level.following.interval == IntegerInterval(16, 64)
    assert level.following.interval.issubset(level.params.interval)
    assert level.events.identity_violations == 0
    assert level.events.equivalence_violations == 0
    assert level.d in level.following.interval
    assert 0.0 <= result.success_budget <= 1.0


def test_cascade_below_default_floor_reports_clipped_interval():
    # L_2 = 4: D_3 = [64, 128] overshoots D_2 = [16, 64]
    profile = ConstantsProfile.generalized(tau_floor=2.0)
    result = iterate_reduction(
        bernoulli_estimator(2 ** 16, 15), profile, 8, 20, Seed(8), alpha=8.0, samples=30
    )
    assert [level.params.level for level in result.levels][:2] == [1, 2]
    first, second = result.levels[:2]
    assert first.nested
    assert not second.nested
    assert second.following.interval_clipped
    assert second.following.interval == IntegerInterval(64, 64)
    for level in result.levels:
        assert level.nested is not level.following.interval_clipped
        assert level.following.interval.issubset(level.params.interval)


def test_cascade_is_reproducible():
    def run():
        return iterate_reduction(
            bernoulli_estimator(4096, 8), GENERALIZED, 4, 15, Seed(9), samples=10
        )

    first, second = run(), run()
    assert [level.events for level in first.levels] == [level.events for level in second.levels]
    assert [level.d for level in first.levels] == [level.d for level in second.levels]
    assert first.final_level == second.final_level


def test_cascade_stops_at_floor():
    profile = ConstantsProfile.generalized(tau_floor=20.0)
    result = iterate_reduction(bernoulli_estimator(4096, 2), profile, 4, 5, Seed(0), samples=5)
    assert result.stop_reason == "floor"
    assert result.levels == []
    assert result.final_level == 1


def test_paper_profile_collapses_immediately():
    profile = ConstantsProfile.paper(4)
    result = iterate_reduction(bernoulli_estimator(2 ** 16, 2), profile, 4, 5, Seed(0), samples=5)
    assert result.collapsed
    assert result.stop_reason == "collapse"
    assert result.final_level == 1
    assert result.levels[0].params.s_i < 1
    assert result.levels[0].events is None


def test_bucket_selection_confidence_interval():
    selection = BucketSelection(
        bucket=1, samples=4, totals=(8, 2), means=(2.0, 0.5), stderrs=(0.1, 0.2)
    )
    low, high = selection.confidence_interval
    assert low == pytest.approx(0.0)
    assert high == pytest.approx(1.1)
    assert selection.markov_bound_holds
    assert selection.mean_in_range == 2.5

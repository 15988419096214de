"""The pruning reduction.

Tests of a strategy are bucketed by size; one bucket whose expected population
is at most the average stays, every smaller test is answered 0, every larger
test 1, and the survivors are asked on a randomly permuted universe. The pruned
strategy is again a `NonAdaptiveStrategy`, so the step iterates.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple

import attr
import numpy as np
import numpy.typing as npt

from gtprune.analysis import (
    ConstantsProfile,
    IntegerInterval,
    D_interval,
    bucket_count,
    log_iter,
    n_next_formula,
)
from gtprune.common import FAIL, Estimate, SeedStream
from gtprune.errors import DomainError, ErrorInfo, UsageError
from gtprune.strategies import (
    AnswerArray,
    NonAdaptiveStrategy,
    StrategyDraw,
    answer_tests,
    is_alpha_success,
)
from gtprune.universe import (
    ItemSet,
    Permutation,
    Seed,
    apply_permutation,
    random_permutation,
    sample_defective_set,
)

__all__ = [
    "Prediction",
    "ReductionParams",
    "BucketHistogram",
    "BucketSelection",
    "ReducedDraw",
    "ReducedStrategy",
    "EventStats",
    "LevelResult",
    "CascadeResult",
    "bucket_bounds",
    "initial_params",
    "partition_counts",
    "partition_sizes",
    "choose_bucket",
    "select_bucket",
    "classify_test",
    "classify_sizes",
    "next_params",
    "next_budget",
    "reduce_once",
    "measure_events",
    "iterate_reduction",
]

_logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 200
DEFAULT_DELTA = 1.0 / 3.0


class Prediction(IntEnum):
    PREDICTED_0 = 0
    PREDICTED_1 = 1
    RESIDUAL = 2


def bucket_bounds(
    n_i: float, log_value: float, j: int, profile: Optional[ConstantsProfile] = None
) -> Tuple[float, float]:
    """``(n_i / L**(step*(j+1)), n_i / L**(step*j))`` with ``step = 4`` unless a profile says otherwise"""
    if not log_value > 1:
        raise UsageError.out_of_range("L", log_value, "L > 1")
    if j < 0:
        raise UsageError.out_of_range("j", j, "j >= 0")
    step = profile.bucket_exponent_step if profile is not None else 4.0
    return n_i / log_value ** (step * (j + 1)), n_i / log_value ** (step * j)


def _interval_validator(
    instance: "ReductionParams", attribute: "attr.Attribute[float]", value: float
) -> None:
    if not value > 0:
        raise UsageError.out_of_range(attribute.name, value, "a positive number")


@attr.frozen
class ReductionParams:
    """State of one level of the reduction.

    `log_value` is ``L_i = log^[i] n``; `bucket` stays None until a bucket is
    selected, after which `low_threshold`/`high_threshold` are its endpoints.
    """

    level: int
    universe_size: int
    n_i: float = attr.field(validator=_interval_validator)
    s_i: float
    log_value: float
    bucket_total: int
    interval: IntegerInterval
    delta: float
    profile: ConstantsProfile
    interval_clipped: bool = False
    bucket: Optional[int] = None
    low_threshold: Optional[float] = None
    high_threshold: Optional[float] = None

    def __attrs_post_init__(self) -> None:
        if self.bucket is None:
            return
        if not 0 <= self.bucket < self.bucket_total:
            raise UsageError.out_of_range(
                "bucket", self.bucket, f"0 <= j < r = {self.bucket_total}"
            )
        if (
            self.low_threshold is None
            or self.high_threshold is None
            or not self.low_threshold < self.high_threshold <= self.n_i
        ):
            raise UsageError(
                ErrorInfo(
                    message=(
                        f"Invalid thresholds ({self.low_threshold}, {self.high_threshold}),"
                        f" expected low < high <= n_i = {self.n_i}"
                    ),
                    code="invalid_thresholds",
                    target=str(self.level),
                )
            )

    def bucket_bounds(self, j: int) -> Tuple[float, float]:
        return bucket_bounds(self.n_i, self.log_value, j, self.profile)

    def edges(self) -> npt.NDArray[np.float64]:
        """``edges[k] = n_i / L**(step*k)``; bucket j is ``[edges[j+1], edges[j])``"""
        step = self.profile.bucket_exponent_step
        return np.array(
            [self.n_i / self.log_value ** (step * k) for k in range(self.bucket_total + 1)]
        )

    @property
    def covered_range(self) -> Tuple[float, float]:
        edges = self.edges()
        return float(edges[-1]), float(edges[0])

    def with_bucket(self, j: int) -> "ReductionParams":
        low, high = self.bucket_bounds(j)
        return attr.evolve(self, bucket=j, low_threshold=low, high_threshold=high)

    def thresholds(self) -> Tuple[float, float]:
        if self.low_threshold is None or self.high_threshold is None:
            raise UsageError(
                ErrorInfo(
                    message="No bucket selected for this level",
                    code="bucket_not_selected",
                    target=str(self.level),
                )
            )
        return self.low_threshold, self.high_threshold


def _level_bucket_total(log_value: float, profile: ConstantsProfile) -> int:
    return bucket_count(log_value, profile) if log_value > 1 else 1


def _paper_budget(n: int, level: int, profile: ConstantsProfile) -> float:
    """``log^[i] n / (C tau) ** (tau - i + 2)``, 0 once the iterated log leaves its domain"""
    tau = profile.tau
    try:
        log_value = log_iter(n, level)
    except DomainError:
        return 0.0
    if log_value <= 0:
        return 0.0
    return float(2.0 ** (math.log2(log_value) - (tau - level + 2) * math.log2(profile.c_base * tau)))


def initial_params(
    strategy: NonAdaptiveStrategy,
    profile: ConstantsProfile,
    delta: float = DEFAULT_DELTA,
) -> ReductionParams:
    """Level 1: ``n_1 = n``, ``s_1`` the strategy's test count (formula value in the paper profile)"""
    n = strategy.universe_size
    if n < 4:
        raise UsageError.out_of_range("n", n, "n >= 4")
    log_value = math.log2(n)
    s_1 = _paper_budget(n, 1, profile) if profile.is_paper else strategy.nominal_test_count
    return ReductionParams(
        level=1,
        universe_size=n,
        n_i=float(n),
        s_i=s_1,
        log_value=log_value,
        bucket_total=_level_bucket_total(log_value, profile),
        interval=D_interval(n, float(n), 1, profile=profile),
        delta=delta,
        profile=profile,
    )


@attr.frozen
class BucketHistogram:
    """Counts of tests per size bucket.

    `counts[j]` uses the half-open bucket ``[low_j, high_j)`` (bucket 0 closed at
    ``n_i``); `interior[j]` only counts sizes strictly inside ``(low_j, high_j)``,
    which is exactly what the reduction keeps as residual tests.
    """

    counts: Tuple[int, ...]
    interior: Tuple[int, ...]
    overflow: int

    @property
    def total(self) -> int:
        return sum(self.counts) + self.overflow


def partition_sizes(sizes: npt.ArrayLike, params: ReductionParams) -> BucketHistogram:
    values = np.asarray(sizes, dtype=np.float64)
    edges = params.edges()
    counts = []
    interior = []
    for j in range(params.bucket_total):
        low, high = edges[j + 1], edges[j]
        inside = (values >= low) & ((values <= high) if j == 0 else (values < high))
        counts.append(int(np.count_nonzero(inside)))
        interior.append(int(np.count_nonzero((values > low) & (values < high))))
    overflow = int(values.size) - sum(counts)
    return BucketHistogram(tuple(counts), tuple(interior), overflow)


def partition_counts(tests: Sequence[ItemSet], params: ReductionParams) -> BucketHistogram:
    return partition_sizes([len(test) for test in tests], params)


def choose_bucket(means: Sequence[float]) -> int:
    """Index of the smallest mean; ties go to the smallest index"""
    if not len(means):
        raise UsageError(ErrorInfo(message="No buckets to choose from", code="no_buckets"))
    return int(np.argmin(np.asarray(means, dtype=np.float64)))


@attr.frozen
class BucketSelection:
    """Averaged bucket populations over `samples` strategy draws"""

    bucket: int
    samples: int
    totals: Tuple[int, ...]
    means: Tuple[float, ...]
    stderrs: Tuple[float, ...]

    @property
    def expected_residual(self) -> float:
        return self.means[self.bucket]

    @property
    def mean_in_range(self) -> float:
        return sum(self.totals) / self.samples

    @property
    def confidence_interval(self) -> Tuple[float, float]:
        mean, stderr = self.means[self.bucket], self.stderrs[self.bucket]
        return max(0.0, mean - 3 * stderr), mean + 3 * stderr

    @property
    def markov_bound_holds(self) -> bool:
        # Integer form of min_j E[T_j] <= sum_j E[T_j] / r
        return self.totals[self.bucket] * len(self.totals) <= sum(self.totals)


def select_bucket(
    strategy: NonAdaptiveStrategy,
    params: ReductionParams,
    samples: int,
    seed: Seed,
) -> BucketSelection:
    if samples < 1:
        raise UsageError.out_of_range("samples", samples, "samples >= 1")
    rows = np.empty((samples, params.bucket_total), dtype=np.int64)
    for sample in range(samples):
        sizes = strategy.draw(seed.child(sample)).sizes()
        rows[sample] = partition_sizes(sizes, params).counts
    totals = rows.sum(axis=0)
    means = totals / samples
    if samples > 1:
        stderrs = rows.std(axis=0, ddof=1) / math.sqrt(samples)
    else:
        stderrs = np.zeros_like(means)
    bucket = choose_bucket(means)
    _logger.debug(
        "Level %d bucket averages %s, chose j=%d", params.level, means.tolist(), bucket
    )
    return BucketSelection(
        bucket=bucket,
        samples=samples,
        totals=tuple(int(t) for t in totals),
        means=tuple(float(m) for m in means),
        stderrs=tuple(float(s) for s in stderrs),
    )


def classify_sizes(sizes: npt.ArrayLike, params: ReductionParams) -> npt.NDArray[np.int8]:
    low, high = params.thresholds()
    values = np.asarray(sizes, dtype=np.float64)
    labels = np.full(values.shape, Prediction.RESIDUAL, dtype=np.int8)
    labels[values <= low] = Prediction.PREDICTED_0
    labels[values >= high] = Prediction.PREDICTED_1
    return labels


def classify_test(test: ItemSet, params: ReductionParams) -> Prediction:
    return Prediction(int(classify_sizes([len(test)], params)[0]))


class ReducedDraw(StrategyDraw):
    """One run of the pruned strategy.

    Keeps the wrapped draw, the permutation and the per-test predictions so the
    measurement can replay the wrapped strategy on the same randomness.
    """

    __slots__ = "inner", "permutation", "labels", "residual_indices", "failed", "_tests"

    def __init__(
        self,
        inner: StrategyDraw,
        permutation: Permutation,
        labels: npt.NDArray[np.int8],
        budget: float,
    ):
        self.inner = inner
        self.permutation = permutation
        self.labels = labels
        self.residual_indices = np.flatnonzero(labels == Prediction.RESIDUAL)
        self.failed = bool(self.residual_indices.size > budget)
        self._tests: Optional[List[ItemSet]] = None

    @property
    def residual_count(self) -> int:
        return int(self.residual_indices.size)

    @property
    def tests(self) -> Sequence[ItemSet]:
        if self._tests is None:
            if self.failed:
                self._tests = []
            else:
                source = self.inner.tests
                self._tests = [
                    apply_permutation(self.permutation, source[k])
                    for k in self.residual_indices
                ]
        return self._tests

    def sizes(self) -> npt.NDArray[np.int64]:
        if self.failed:
            return np.empty(0, dtype=np.int64)
        return self.inner.sizes()[self.residual_indices]

    def completed_answers(self, residual_answers: AnswerArray) -> AnswerArray:
        """Answers for every wrapped test: predictions plus the residual answers spliced in"""
        answers = (self.labels == Prediction.PREDICTED_1).astype(np.uint8)
        answers[self.residual_indices] = residual_answers
        return answers

    def _decode(self, answers: AnswerArray) -> Estimate:
        if self.failed:
            return FAIL
        return self.inner.decode(self.completed_answers(answers))


class ReducedStrategy(NonAdaptiveStrategy):
    """Pruned strategy: residual tests only, on a uniformly permuted universe"""

    __slots__ = "inner", "params", "budget"

    def __init__(self, inner: NonAdaptiveStrategy, params: ReductionParams, budget: float):
        params.thresholds()
        if budget < 0:
            raise UsageError.out_of_range("s_next", budget, "s_next >= 0")
        if inner.universe_size != params.universe_size:
            raise UsageError(
                ErrorInfo(
                    message=f"Strategy universe {inner.universe_size} != {params.universe_size}",
                    code="universe_mismatch",
                )
            )
        self.inner = inner
        self.params = params
        self.budget = budget

    @property
    def universe_size(self) -> int:
        return self.inner.universe_size

    @property
    def nominal_test_count(self) -> float:
        return self.budget

    def draw(self, seed: Seed) -> ReducedDraw:
        permutation = random_permutation(self.universe_size, seed.child(SeedStream.PERMUTATION))
        inner = self.inner.draw(seed.child(SeedStream.WRAPPED))
        labels = classify_sizes(inner.sizes(), self.params)
        return ReducedDraw(inner, permutation, labels, self.budget)

    def __repr__(self) -> str:
        return f"ReducedStrategy(level={self.params.level + 1}, inner={self.inner!r})"


def next_params(params: ReductionParams, s_next: float) -> ReductionParams:
    """Parameters of the pruned level.

    ``D_{i+1}`` is clipped to ``D_i`` when rounding or a coarse profile breaks the
    nesting; a warning is logged when that happens.
    """
    params.thresholds()
    assert params.bucket is not None
    profile = params.profile
    n = params.universe_size
    n_next = n_next_formula(params.n_i, params.log_value, params.bucket, profile)
    log_next = math.log2(params.log_value)
    if not n_next > 0:
        raise DomainError(
            ErrorInfo(message=f"n_{params.level + 1} is not positive", code="log_domain")
        )
    interval = D_interval(n, min(n_next, float(n)), params.level + 1, n, profile)
    nested = interval.intersect(params.interval)
    clipped = not interval.issubset(params.interval)
    if clipped:
        _logger.warning(
            "Level %d: D=%s not inside %s, clipped to %s",
            params.level + 1,
            interval,
            params.interval,
            nested,
        )
    delta = params.delta
    if profile.is_paper:
        delta += 1.0 / (12.0 * profile.tau)
    return ReductionParams(
        level=params.level + 1,
        universe_size=n,
        n_i=n_next,
        s_i=s_next,
        log_value=log_next,
        bucket_total=_level_bucket_total(log_next, profile),
        interval=nested,
        delta=delta,
        profile=profile,
        interval_clipped=clipped,
    )


def reduce_once(
    strategy: NonAdaptiveStrategy, params: ReductionParams, s_next: float
) -> Tuple[ReducedStrategy, ReductionParams]:
    """Builds the pruned strategy and the parameters of the next level.

    Pure: the permutation and the wrapped strategy's randomness are drawn per
    seed when the returned strategy is drawn.
    """
    return ReducedStrategy(strategy, params, s_next), next_params(params, s_next)


@attr.frozen
class EventStats:
    """Event counts over `trials` coupled trials.

    `prev_successes` counts the wrapped strategy succeeding on the pre-image of
    the defective set, drawn from the same randomness as the pruned run.
    """

    trials: int
    d: int
    alpha: float
    m0: int = 0
    m1: int = 0
    w: int = 0
    prev_successes: int = 0
    next_successes: int = 0
    next_failures: int = 0
    residual_total: int = 0
    identity_violations: int = 0
    equivalence_violations: int = 0

    def merge(self, other: "EventStats") -> "EventStats":
        return EventStats(
            trials=self.trials + other.trials,
            d=self.d,
            alpha=self.alpha,
            m0=self.m0 + other.m0,
            m1=self.m1 + other.m1,
            w=self.w + other.w,
            prev_successes=self.prev_successes + other.prev_successes,
            next_successes=self.next_successes + other.next_successes,
            next_failures=self.next_failures + other.next_failures,
            residual_total=self.residual_total + other.residual_total,
            identity_violations=self.identity_violations + other.identity_violations,
            equivalence_violations=self.equivalence_violations + other.equivalence_violations,
        )

    def _rate(self, count: int) -> float:
        return count / self.trials if self.trials else 0.0

    @property
    def p_m0(self) -> float:
        return self._rate(self.m0)

    @property
    def p_m1(self) -> float:
        return self._rate(self.m1)

    @property
    def p_w(self) -> float:
        return self._rate(self.w)

    @property
    def success_prev(self) -> float:
        return self._rate(self.prev_successes)

    @property
    def success_next(self) -> float:
        return self._rate(self.next_successes)

    @property
    def mean_residual(self) -> float:
        return self._rate(self.residual_total)

    def stderr(self, rate: float) -> float:
        if not self.trials:
            return 0.0
        return math.sqrt(rate * (1.0 - rate) / self.trials)

    @property
    def pooled_stderr(self) -> float:
        rates = (self.success_prev, self.success_next, self.p_m0, self.p_m1, self.p_w)
        return math.sqrt(sum(self.stderr(rate) ** 2 for rate in rates))

    def degradation_gap(self) -> float:
        """``success_next - (success_prev - P[M0] - P[M1] - P[W])``"""
        slack = self.next_successes - self.prev_successes + self.m0 + self.m1 + self.w
        return self._rate(slack)

    def degradation_holds(self, tolerance: Optional[float] = None) -> bool:
        if tolerance is None:
            tolerance = 3 * self.pooled_stderr
        return self.degradation_gap() >= -tolerance


def _run_trial(
    reduced: ReducedStrategy, d: int, alpha: float, seed: Seed
) -> EventStats:
    n = reduced.universe_size
    defective = sample_defective_set(n, d, seed.child(SeedStream.DEFECTIVE))
    draw = reduced.draw(seed.child(SeedStream.STRATEGY))

    # The wrapped strategy asked on phi^-1(I) sees exactly what the pruned one sees on I
    preimage = apply_permutation(draw.permutation.inverse(), defective)
    prime_answers = answer_tests(draw.inner.tests, preimage)
    prev_success = is_alpha_success(draw.inner.decode(prime_answers), d, alpha)

    m0 = bool((prime_answers[draw.labels == Prediction.PREDICTED_0] == 1).any())
    m1 = bool((prime_answers[draw.labels == Prediction.PREDICTED_1] == 0).any())
    residual_answers = answer_tests(draw.tests, defective)
    estimate = draw.decode(residual_answers)

    histogram = partition_sizes(draw.inner.sizes(), reduced.params)
    assert reduced.params.bucket is not None
    identity_ok = draw.residual_count == histogram.interior[reduced.params.bucket]
    equivalent = draw.failed or bool(
        np.array_equal(residual_answers, prime_answers[draw.residual_indices])
    )
    return EventStats(
        trials=1,
        d=d,
        alpha=alpha,
        m0=int(m0),
        m1=int(m1),
        w=int(draw.failed),
        prev_successes=int(prev_success),
        next_successes=int(is_alpha_success(estimate, d, alpha)),
        next_failures=int(estimate == FAIL),
        residual_total=draw.residual_count,
        identity_violations=int(not identity_ok),
        equivalence_violations=int(not equivalent),
    )


def _run_chunk(
    reduced: ReducedStrategy, d: int, alpha: float, seed: Seed, trials: range
) -> EventStats:
    stats = EventStats(trials=0, d=d, alpha=alpha)
    for trial in trials:
        stats = stats.merge(_run_trial(reduced, d, alpha, seed.child(trial)))
    return stats


def measure_events(
    strategy: NonAdaptiveStrategy,
    params: ReductionParams,
    s_next: float,
    d: int,
    trials: int,
    seed: Seed,
    alpha: float = 2.0,
    workers: int = 1,
) -> EventStats:
    """Frequencies of M0, M1, W and of both success events over coupled trials.

    Each trial draws a fresh defective set, permutation and strategy seed from
    ``seed.child(trial)``, so the counts do not depend on `workers`.
    """
    if trials < 1:
        raise UsageError.out_of_range("trials", trials, "trials >= 1")
    if workers < 1:
        raise UsageError.out_of_range("workers", workers, "workers >= 1")
    if not alpha > 1:
        raise UsageError.out_of_range("alpha", alpha, "alpha > 1")
    reduced, following = reduce_once(strategy, params, s_next)
    n = params.universe_size
    if d not in following.interval or not 1 <= d <= n / 2:
        raise UsageError.out_of_range(
            "d", d, f"d in D_{following.level} = {following.interval} and d <= n/2"
        )

    if workers == 1:
        return _run_chunk(reduced, d, alpha, seed, range(trials))

    bounds = np.linspace(0, trials, min(workers, trials) + 1).astype(int)
    chunks = [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        parts = list(
            executor.map(lambda chunk: _run_chunk(reduced, d, alpha, seed, chunk), chunks)
        )
    stats = EventStats(trials=0, d=d, alpha=alpha)
    for part in parts:
        stats = stats.merge(part)
    return stats


@attr.frozen
class LevelResult:
    """One reduction step; `events` is None when the step could not be measured.

    `nested` refers to the unclipped ``D_{i+1}``: False when it had to be cut
    back to ``D_i``.
    """

    params: ReductionParams
    selection: BucketSelection
    following: ReductionParams
    d: Optional[int]
    events: Optional[EventStats]
    nested: bool


@attr.frozen
class CascadeResult:
    levels: List[LevelResult]
    final_level: int
    collapsed: bool
    stop_reason: str
    failure_budget: float

    @property
    def success_budget(self) -> float:
        return max(0.0, 1.0 - self.failure_budget)


def _measurable(params: ReductionParams) -> IntegerInterval:
    return params.interval.intersect(IntegerInterval(1, params.universe_size // 2))


def next_budget(params: ReductionParams, selection: BucketSelection) -> float:
    if params.profile.is_paper:
        return _paper_budget(params.universe_size, params.level + 1, params.profile)
    return params.profile.markov_slack * selection.expected_residual


def iterate_reduction(
    strategy: NonAdaptiveStrategy,
    profile: ConstantsProfile,
    max_levels: int,
    trials: int,
    seed: Seed,
    alpha: float = 2.0,
    samples: int = DEFAULT_SAMPLES,
    delta: float = DEFAULT_DELTA,
    workers: int = 1,
) -> CascadeResult:
    """Applies `reduce_once` while ``log^[i] n`` stays at or above the profile floor.

    Stops when a test budget drops below one (collapse), when the next interval
    of defective sizes is empty or after `max_levels` levels.
    """
    if max_levels < 1:
        raise UsageError.out_of_range("max_levels", max_levels, "max_levels >= 1")
    params = initial_params(strategy, profile, delta)
    current: NonAdaptiveStrategy = strategy
    levels: List[LevelResult] = []
    collapsed = False
    final_level = 1
    stop_reason = "max_levels"

    for _ in range(max_levels):
        final_level = params.level
        if params.log_value < profile.tau_floor:
            stop_reason = "floor"
            break
        started = time.perf_counter()
        level_seed = seed.child(params.level)
        selection = select_bucket(
            current, params, samples, level_seed.child(SeedStream.SELECTION)
        )
        params = params.with_bucket(selection.bucket)
        s_next = next_budget(params, selection)
        reduced, following = reduce_once(current, params, s_next)
        nested = not following.interval_clipped

        target = _measurable(following)
        d: Optional[int] = None
        events: Optional[EventStats] = None
        if not target.is_empty:
            d = target.sample(level_seed.child(SeedStream.INTERVAL))
            events = measure_events(
                current,
                params,
                s_next,
                d,
                trials,
                level_seed.child(SeedStream.EVENTS),
                alpha=alpha,
                workers=workers,
            )
            if not profile.is_paper:
                following = attr.evolve(
                    following, delta=params.delta + events.p_m0 + events.p_m1 + events.p_w
                )
        levels.append(LevelResult(params, selection, following, d, events, nested))
        if events is None:
            _logger.info("Level %d: D_%d is empty, nothing to measure", params.level, following.level)
        else:
            _logger.info(
                "Level %d: bucket %d, s_next=%.4g, d=%d, M0=%.4f M1=%.4f W=%.4f in %.2fs",
                params.level,
                selection.bucket,
                s_next,
                d,
                events.p_m0,
                events.p_m1,
                events.p_w,
                time.perf_counter() - started,
            )

        if params.s_i < 1 or s_next < 1:
            collapsed = True
            final_level = params.level if params.s_i < 1 else following.level
            stop_reason = "collapse"
            break
        if events is None:
            stop_reason = "empty_interval"
            break
        params = following
        current = reduced
    else:
        final_level = params.level

    failure_budget = levels[-1].following.delta if levels else params.delta
    return CascadeResult(levels, final_level, collapsed, stop_reason, failure_budget)

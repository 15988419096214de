"""Non-adaptive strategies: a seeded test generator paired with a decoder.

A strategy is drawn once per seed (`NonAdaptiveStrategy.draw`); the resulting
`StrategyDraw` owns the test list and the decoder for exactly those tests, so
tests never depend on answers.
"""
import logging
from abc import ABCMeta, abstractmethod
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import attr
import numpy as np
import numpy.typing as npt

from gtprune.common import Estimate, SeedStream, is_fail
from gtprune.errors import ErrorInfo, UsageError
from gtprune.universe import ItemSet, Seed, oracle_answer, sample_defective_set

__all__ = [
    "AnswerArray",
    "Decoder",
    "StrategyDraw",
    "NonAdaptiveStrategy",
    "BernoulliEstimator",
    "FixedSizeStrategy",
    "DeterministicStrategy",
    "SuccessStats",
    "bernoulli_estimator",
    "fixed_size_strategy",
    "deterministic_strategy",
    "empty_strategy",
    "constant_decoder",
    "answer_tests",
    "run_strategy",
    "is_alpha_success",
    "measure_success",
]

_logger = logging.getLogger(__name__)

AnswerArray = npt.NDArray[np.uint8]
SizeArray = npt.NDArray[np.int64]
Decoder = Callable[[AnswerArray], Estimate]


class StrategyDraw(metaclass=ABCMeta):
    """Tests of one seeded run together with the decoder that consumes their answers"""

    @property
    @abstractmethod
    def tests(self) -> Sequence[ItemSet]:
        ...

    @abstractmethod
    def _decode(self, answers: AnswerArray) -> Estimate:
        ...

    def sizes(self) -> SizeArray:
        return np.fromiter((len(t) for t in self.tests), dtype=np.int64)

    def decode(self, answers: npt.ArrayLike) -> Estimate:
        outcomes = np.asarray(answers, dtype=np.uint8).reshape(-1)
        expected = len(self.tests)
        if outcomes.size != expected:
            raise UsageError(
                ErrorInfo(
                    message=f"Expected {expected} answers, got {outcomes.size}",
                    code="answer_count_mismatch",
                    target="answers",
                )
            )
        return self._decode(outcomes)


class NonAdaptiveStrategy(metaclass=ABCMeta):
    @property
    @abstractmethod
    def universe_size(self) -> int:
        ...

    @property
    @abstractmethod
    def nominal_test_count(self) -> float:
        ...

    @abstractmethod
    def draw(self, seed: Seed) -> StrategyDraw:
        ...

    def generate(self, seed: Seed) -> List[ItemSet]:
        return list(self.draw(seed).tests)

    def decode(self, seed: Seed, answers: npt.ArrayLike) -> Estimate:
        return self.draw(seed).decode(answers)


def constant_decoder(estimate: Estimate) -> Decoder:
    def _decode(answers: AnswerArray) -> Estimate:
        return estimate

    return _decode


def _check_positive(name: str, value: int, minimum: int) -> None:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise UsageError(ErrorInfo.invalid_type(int, type(value), target=name))
    if value < minimum:
        raise UsageError.out_of_range(name, value, f"{name} >= {minimum}")


class _SampledDraw(StrategyDraw):
    """Uniform random tests of known sizes, materialised on first access"""

    __slots__ = "_universe_size", "_sizes", "_contents_seed", "_decoder", "_tests"

    def __init__(
        self, universe_size: int, sizes: SizeArray, contents_seed: Seed, decoder: Decoder
    ):
        self._universe_size = universe_size
        self._sizes = sizes
        self._contents_seed = contents_seed
        self._decoder = decoder
        self._tests: Optional[List[ItemSet]] = None

    @property
    def tests(self) -> Sequence[ItemSet]:
        if self._tests is None:
            rng = self._contents_seed.generator()
            n = self._universe_size
            self._tests = [
                ItemSet.from_indices(n, rng.choice(n, size=int(m), replace=False))
                for m in self._sizes
            ]
        return self._tests

    def sizes(self) -> SizeArray:
        return self._sizes

    def _decode(self, answers: AnswerArray) -> Estimate:
        return self._decoder(answers)


def _threshold_decoder(repetitions: int) -> Decoder:
    def _decode(answers: AnswerArray) -> Estimate:
        positives = answers.reshape(-1, repetitions).sum(axis=1)
        quiet = np.flatnonzero(2 * positives <= repetitions)
        level = int(quiet[0]) + 1 if quiet.size else positives.size + 1
        return 1 << level

    return _decode


class BernoulliEstimator(NonAdaptiveStrategy):
    """``R`` tests per level ``i = 1..ceil(log2 n)``, items included with probability ``2**-i``.

    Decodes to ``2**i*`` where ``i*`` is the first level at which at most half of
    the answers are positive. Test sizes are drawn first (binomial), contents
    later from a separate stream: given its size an independent-inclusion test
    is a uniform subset.
    """

    __slots__ = "_universe_size", "repetitions", "levels", "_probabilities", "_decoder"

    def __init__(self, universe_size: int, repetitions: int):
        _check_positive("n", universe_size, 2)
        _check_positive("repetitions", repetitions, 1)
        self._universe_size = int(universe_size)
        self.repetitions = int(repetitions)
        self.levels = (self._universe_size - 1).bit_length()
        self._probabilities = np.repeat(
            np.ldexp(1.0, -np.arange(1, self.levels + 1)), self.repetitions
        )
        self._decoder = _threshold_decoder(self.repetitions)

    @property
    def universe_size(self) -> int:
        return self._universe_size

    @property
    def nominal_test_count(self) -> float:
        return float(self.repetitions * self.levels)

    def draw(self, seed: Seed) -> StrategyDraw:
        sizes = seed.generator().binomial(self._universe_size, self._probabilities)
        return _SampledDraw(
            self._universe_size,
            sizes.astype(np.int64),
            seed.child(SeedStream.CONTENTS),
            self._decoder,
        )

    def __repr__(self) -> str:
        return f"BernoulliEstimator(n={self._universe_size}, R={self.repetitions})"


class _FixedDraw(StrategyDraw):
    __slots__ = "_tests", "_sizes", "_decoder"

    def __init__(self, tests: Sequence[ItemSet], sizes: SizeArray, decoder: Decoder):
        self._tests = tests
        self._sizes = sizes
        self._decoder = decoder

    @property
    def tests(self) -> Sequence[ItemSet]:
        return self._tests

    def sizes(self) -> SizeArray:
        return self._sizes

    def _decode(self, answers: AnswerArray) -> Estimate:
        return self._decoder(answers)


class FixedSizeStrategy(NonAdaptiveStrategy):
    """Uniformly random tests of prescribed sizes with a caller-supplied decoder"""

    __slots__ = "_universe_size", "_sizes", "decoder"

    def __init__(self, universe_size: int, sizes: Sequence[int], decoder: Decoder):
        _check_positive("n", universe_size, 1)
        for position, size in enumerate(sizes):
            _check_positive(f"sizes[{position}]", size, 0)
            if size > universe_size:
                raise UsageError.out_of_range(
                    f"sizes[{position}]", size, f"a size in [0, {universe_size}]"
                )
        self._universe_size = int(universe_size)
        self._sizes = np.asarray(sizes, dtype=np.int64)
        self._sizes.setflags(write=False)
        self.decoder = decoder

    @property
    def universe_size(self) -> int:
        return self._universe_size

    @property
    def nominal_test_count(self) -> float:
        return float(self._sizes.size)

    def draw(self, seed: Seed) -> StrategyDraw:
        return _SampledDraw(self._universe_size, self._sizes, seed, self.decoder)


class DeterministicStrategy(NonAdaptiveStrategy):
    """The same test list for every seed"""

    __slots__ = "_universe_size", "_tests", "_sizes", "decoder"

    def __init__(self, universe_size: int, tests: Sequence[ItemSet], decoder: Decoder):
        _check_positive("n", universe_size, 1)
        for test in tests:
            if test.universe_size != universe_size:
                raise UsageError(
                    ErrorInfo(
                        message=f"Test universe {test.universe_size} != {universe_size}",
                        code="universe_mismatch",
                        target="tests",
                    )
                )
        self._universe_size = int(universe_size)
        self._tests = tuple(tests)
        self._sizes = np.fromiter((len(t) for t in self._tests), dtype=np.int64)
        self._sizes.setflags(write=False)
        self.decoder = decoder

    @property
    def universe_size(self) -> int:
        return self._universe_size

    @property
    def nominal_test_count(self) -> float:
        return float(len(self._tests))

    def draw(self, seed: Seed) -> StrategyDraw:
        return _FixedDraw(self._tests, self._sizes, self.decoder)


def bernoulli_estimator(n: int, repetitions: int) -> BernoulliEstimator:
    return BernoulliEstimator(n, repetitions)


def fixed_size_strategy(
    n: int, sizes: Sequence[int], decoder: Decoder
) -> FixedSizeStrategy:
    return FixedSizeStrategy(n, sizes, decoder)


def deterministic_strategy(
    n: int, tests: Sequence[ItemSet], decoder: Decoder
) -> DeterministicStrategy:
    return DeterministicStrategy(n, tests, decoder)


def empty_strategy(n: int, estimate: Estimate) -> DeterministicStrategy:
    return DeterministicStrategy(n, (), constant_decoder(estimate))


def answer_tests(tests: Sequence[ItemSet], defective: ItemSet) -> AnswerArray:
    return np.fromiter(
        (oracle_answer(test, defective) for test in tests),
        dtype=np.uint8,
        count=len(tests),
    )


def run_strategy(
    strategy: NonAdaptiveStrategy, defective: ItemSet, seed: Seed
) -> Estimate:
    if strategy.universe_size != defective.universe_size:
        raise UsageError(
            ErrorInfo(
                message=f"Universe sizes differ: {strategy.universe_size} != {defective.universe_size}",
                code="universe_mismatch",
            )
        )
    draw = strategy.draw(seed)
    return draw.decode(answer_tests(draw.tests, defective))


def is_alpha_success(estimate: Estimate, d: int, alpha: float) -> bool:
    """``d <= D <= alpha * d``; FAIL is never a success"""
    return not is_fail(estimate) and d <= estimate <= alpha * d


@attr.frozen
class SuccessStats:
    d: int
    trials: int
    alphas: Tuple[float, ...]
    successes: Tuple[int, ...]
    failures: int

    def rate(self, alpha: float) -> float:
        return self.successes[self.alphas.index(alpha)] / self.trials

    @property
    def fail_rate(self) -> float:
        return self.failures / self.trials

    def rates(self) -> Dict[float, float]:
        return {alpha: count / self.trials for alpha, count in zip(self.alphas, self.successes)}


def measure_success(
    strategy: NonAdaptiveStrategy,
    d: int,
    trials: int,
    seed: Seed,
    alphas: Sequence[float] = (2.0,),
) -> SuccessStats:
    """Runs the strategy against fresh uniform d-subsets; trial ``t`` uses ``seed.child(t)``"""
    _check_positive("trials", trials, 1)
    for alpha in alphas:
        if not alpha > 1:
            raise UsageError.out_of_range("alpha", alpha, "alpha > 1")
    counts = [0] * len(alphas)
    failures = 0
    n = strategy.universe_size
    for trial in range(trials):
        trial_seed = seed.child(trial)
        defective = sample_defective_set(n, d, trial_seed.child(SeedStream.DEFECTIVE))
        estimate = run_strategy(strategy, defective, trial_seed.child(SeedStream.STRATEGY))
        if is_fail(estimate):
            failures += 1
            continue
        for position, alpha in enumerate(alphas):
            counts[position] += is_alpha_success(estimate, d, alpha)
    _logger.debug("Measured %r at d=%d over %d trials: %s", strategy, d, trials, counts)
    return SuccessStats(d, trials, tuple(alphas), tuple(counts), failures)

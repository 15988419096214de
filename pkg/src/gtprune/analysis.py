"""Exact probabilities, closed-form quantities of the pruning lemma and
iterated-logarithm arithmetic in log-space.

All logarithms are base 2. Quantities such as ``n = 2**65536`` or
``(480 * tau) ** (tau - i + 2)`` are handled through their base-2 logarithm.
"""
import math
from fractions import Fraction
from typing import List, Optional, Protocol, Union

import attr
import numpy as np
from scipy import special

from gtprune.errors import DomainError, ErrorInfo, UsageError
from gtprune.universe import Seed

__all__ = [
    "LogSpaceNumber",
    "ConstantsProfile",
    "IntegerInterval",
    "BoundEstimate",
    "PaperLevelCheck",
    "CollapseReport",
    "as_log_space",
    "log_iter",
    "log_star",
    "s_formula",
    "s_formula_log2",
    "bucket_count",
    "r_formula",
    "n_next_formula",
    "D_interval",
    "intersect_prob_fraction",
    "intersect_prob_exact",
    "intersect_prob_product",
    "simulate_intersection_frequency",
    "bound_M0",
    "bound_M1",
    "bound_W",
    "success_lower_bound",
    "paper_chain",
    "theorem_collapse_check",
]

# Binomial ratios are computed with exact integers up to this universe size
EXACT_BINOMIAL_LIMIT = 4096

# Powers of two kept as exact integers up to this exponent
_EXACT_POW2_LIMIT = 1 << 17

_LOG2_E = math.log2(math.e)

# Relative slack used when rounding real interval endpoints to integers
_ROUNDING_SLACK = 1e-12


class LogSpaceNumber:
    """Positive quantity represented by its base-2 logarithm.

    Integers keep an exact copy (`exact`) so small values and exact powers of two
    take the exact path in `log_iter`.
    """

    __slots__ = "log2", "exact"

    def __init__(self, log2: float, exact: Optional[int] = None):
        if math.isnan(log2) or math.isinf(log2):
            raise DomainError(
                ErrorInfo(message=f"Invalid log-space value {log2}", code="log_domain")
            )
        self.log2 = float(log2)
        self.exact = exact

    @classmethod
    def of(cls, value: Union[int, float]) -> "LogSpaceNumber":
        if value <= 0:
            raise DomainError(
                ErrorInfo(
                    message=f"Only positive values have a logarithm, got {value}",
                    code="log_domain",
                )
            )
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return cls(math.log2(int(value)), int(value))
        return cls(math.log2(value))

    @classmethod
    def pow2(cls, exponent: Union[int, float]) -> "LogSpaceNumber":
        if float(exponent).is_integer() and 0 <= exponent <= _EXACT_POW2_LIMIT:
            return cls(float(exponent), 1 << int(exponent))
        return cls(float(exponent))

    @classmethod
    def parse(cls, text: Union[str, int]) -> "LogSpaceNumber":
        """Accepts an integer (``"65536"``) or a power of two (``"pow2:65536"``)"""
        if isinstance(text, int) and not isinstance(text, bool):
            return cls.of(text)
        raw = str(text).strip()
        try:
            if raw.startswith("pow2:"):
                return cls.pow2(float(raw[len("pow2:"):]))
            return cls.of(int(raw))
        except ValueError:
            raise UsageError(
                ErrorInfo(
                    message=f"Expected an integer or 'pow2:<exponent>', got {raw!r}",
                    code="invalid_universe_size",
                )
            ) from None

    def to_float(self) -> float:
        try:
            if self.exact is not None:
                return float(self.exact)
            return float(2.0 ** self.log2)
        except OverflowError:
            raise DomainError(
                ErrorInfo(
                    message=f"{self} is not representable as a float",
                    code="not_representable",
                )
            ) from None

    def to_int(self) -> int:
        if self.exact is None:
            raise DomainError(
                ErrorInfo(message=f"{self} is not an exact integer", code="not_exact")
            )
        return self.exact

    def __mul__(self, other: Union["LogSpaceNumber", int, float]) -> "LogSpaceNumber":
        other = as_log_space(other)
        exact = None
        if self.exact is not None and other.exact is not None:
            exact = self.exact * other.exact
        return LogSpaceNumber(self.log2 + other.log2, exact)

    def __truediv__(
        self, other: Union["LogSpaceNumber", int, float]
    ) -> "LogSpaceNumber":
        other = as_log_space(other)
        exact = None
        if (
            self.exact is not None
            and other.exact is not None
            and self.exact % other.exact == 0
        ):
            exact = self.exact // other.exact
        return LogSpaceNumber(self.log2 - other.log2, exact)

    def __pow__(self, exponent: float) -> "LogSpaceNumber":
        return LogSpaceNumber(self.log2 * exponent)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LogSpaceNumber):
            return NotImplemented
        if self.exact is not None and other.exact is not None:
            return self.exact == other.exact
        return self.log2 == other.log2

    def __hash__(self) -> int:
        return hash(self.log2)

    def __lt__(self, other: "LogSpaceNumber") -> bool:
        return self.log2 < other.log2

    def __le__(self, other: "LogSpaceNumber") -> bool:
        return self.log2 <= other.log2

    def __str__(self) -> str:
        if self.exact is not None and self.exact.bit_length() <= 64:
            return str(self.exact)
        return f"pow2:{self.log2:.12g}"

    def __repr__(self) -> str:
        return f"LogSpaceNumber({self})"


def as_log_space(value: Union[LogSpaceNumber, int, float, str]) -> LogSpaceNumber:
    if isinstance(value, LogSpaceNumber):
        return value
    if isinstance(value, str):
        return LogSpaceNumber.parse(value)
    return LogSpaceNumber.of(value)


def _positive(name: str) -> "attr._ValidatorType[float]":
    def _validate(instance: object, attribute: "attr.Attribute[float]", value: float) -> None:
        if not value > 0:
            raise UsageError.out_of_range(name, value, "a positive number")

    return _validate


@attr.frozen
class ConstantsProfile:
    """Constants of the pruning recursion.

    The ``paper`` profile fixes them to the values that make the lemma's
    inequalities go through (and makes every test budget fall below one at any
    representable n); ``generalized`` exposes them for desk-scale simulation.
    The width exponent of the defective-size intervals is
    ``bucket_exponent_step / bucket_divisor`` (``1/4`` in the paper profile).
    """

    name: str
    c_base: float = attr.field(validator=_positive("c_base"))
    bucket_exponent_step: float = attr.field(validator=_positive("bucket_exponent_step"))
    bucket_divisor: float = attr.field(validator=_positive("bucket_divisor"))
    markov_slack: float = attr.field(validator=_positive("markov_slack"))
    tau_floor: float = attr.field(validator=_positive("tau_floor"))

    @classmethod
    def paper(cls, tau: int) -> "ConstantsProfile":
        return cls(
            name="paper",
            c_base=480.0,
            bucket_exponent_step=4.0,
            bucket_divisor=16.0,
            markov_slack=30.0 * tau,
            tau_floor=float(tau),
        )

    @classmethod
    def generalized(
        cls,
        c_base: float = 1.0,
        bucket_exponent_step: float = 2.0,
        bucket_divisor: float = 4.0,
        markov_slack: float = 4.0,
        tau_floor: float = 10.0,
    ) -> "ConstantsProfile":
        # With step 2 and divisor 4, bucket 0 of a level with L < 10 yields a next
        # interval that overshoots the current one
        return cls(
            name="generalized",
            c_base=c_base,
            bucket_exponent_step=bucket_exponent_step,
            bucket_divisor=bucket_divisor,
            markov_slack=markov_slack,
            tau_floor=tau_floor,
        )

    @property
    def is_paper(self) -> bool:
        return self.name == "paper"

    @property
    def tau(self) -> float:
        return self.tau_floor

    @property
    def interval_exponent(self) -> float:
        return self.bucket_exponent_step / self.bucket_divisor


@attr.frozen
class IntegerInterval:
    """``{r ∈ ℕ : lo <= r <= hi}``; empty when ``lo > hi``"""

    lo: int
    hi: int

    @property
    def is_empty(self) -> bool:
        return self.lo > self.hi

    def __len__(self) -> int:
        return max(0, self.hi - self.lo + 1)

    def __contains__(self, value: object) -> bool:
        return isinstance(value, (int, np.integer)) and self.lo <= value <= self.hi

    def issubset(self, other: "IntegerInterval") -> bool:
        return self.is_empty or (other.lo <= self.lo and self.hi <= other.hi)

    def intersect(self, other: "IntegerInterval") -> "IntegerInterval":
        return IntegerInterval(max(self.lo, other.lo), min(self.hi, other.hi))

    def sample(self, seed: Seed) -> int:
        if self.is_empty:
            raise DomainError(
                ErrorInfo(message=f"Cannot sample from empty interval {self}", code="empty_interval")
            )
        return int(seed.generator().integers(self.lo, self.hi, endpoint=True))

    def __str__(self) -> str:
        return f"[{self.lo}, {self.hi}]"


def _log_domain_error(k: int, value: float) -> DomainError:
    return DomainError(
        ErrorInfo(
            message=f"Iterated logarithm left its domain: log^[{k}] n = {value} <= 0",
            code="log_domain",
            target=str(k),
        )
    )


def log_iter(n: Union[LogSpaceNumber, int, float, str], k: int) -> float:
    """``log^[k] n``; ``log^[0] n = n``"""
    if k < 0:
        raise UsageError.out_of_range("k", k, "k >= 0")
    n = as_log_space(n)
    if k == 0:
        return n.to_float()
    value = math.log2(n.exact) if n.exact is not None else n.log2
    for step in range(1, k):
        if value <= 0:
            raise _log_domain_error(step, value)
        value = math.log2(value)
    return value


def log_star(n: Union[LogSpaceNumber, int, float, str]) -> int:
    """Smallest k such that ``log^[k] n < 2``"""
    n = as_log_space(n)
    if n.log2 < 1:
        raise DomainError(
            ErrorInfo(message=f"log* is defined for n >= 2, got {n}", code="log_domain")
        )
    k = 1
    value = log_iter(n, 1)
    while value >= 2:
        value = math.log2(value)
        k += 1
    return k


def s_formula_log2(
    n: Union[LogSpaceNumber, int, float, str],
    i: int,
    tau: float,
    profile: ConstantsProfile,
) -> float:
    log_value = log_iter(n, i)
    if log_value < profile.tau_floor:
        raise DomainError(
            ErrorInfo(
                message=f"log^[{i}] n = {log_value:.6g} is below the floor {profile.tau_floor:g}",
                code="below_floor",
                target=str(i),
            )
        )
    return math.log2(log_value) - (tau - i + 2) * math.log2(profile.c_base * tau)


def s_formula(
    n: Union[LogSpaceNumber, int, float, str],
    i: int,
    tau: float,
    profile: ConstantsProfile,
) -> float:
    """Test budget of level i: ``log^[i] n / (C * tau) ** (tau - i + 2)``"""
    return _exp2(s_formula_log2(n, i, tau, profile))


def bucket_count(log_value: float, profile: ConstantsProfile) -> int:
    """Number of size buckets for ``L = log^[i] n``: ``ceil(L / (divisor * log L))``"""
    if log_value <= 1:
        raise _log_domain_error(1, math.log2(log_value) if log_value > 0 else log_value)
    raw = log_value / (profile.bucket_divisor * math.log2(log_value))
    return max(1, math.ceil(raw * (1 - _ROUNDING_SLACK)))


def r_formula(
    n: Union[LogSpaceNumber, int, float, str], i: int, profile: ConstantsProfile
) -> int:
    return bucket_count(log_iter(n, i), profile)


def n_next_formula(
    n_i: float, log_value: float, j: int, profile: ConstantsProfile
) -> float:
    """Universe scale of the next level: ``n_i / L ** (step * j + step / 2)``"""
    if log_value <= 1:
        raise UsageError.out_of_range("L", log_value, "L > 1")
    step = profile.bucket_exponent_step
    return n_i / log_value ** (step * j + step / 2)


def _floor(value: float) -> int:
    return math.floor(value * (1 + _ROUNDING_SLACK))


def _ceil(value: float) -> int:
    return math.ceil(value * (1 - _ROUNDING_SLACK))


def D_interval(
    n: Union[int, float],
    n_i: float,
    i: int,
    n_repr: Union[LogSpaceNumber, int, float, str, None] = None,
    profile: Optional[ConstantsProfile] = None,
) -> IntegerInterval:
    """Defective sizes served at level i:
    ``[n / n_i, n * (log^[i-1] n) ** w / n_i]`` with ``w = 1/4`` in the paper profile.
    """
    if not 0 < n_i <= n:
        raise UsageError.out_of_range("n_i", n_i, f"0 < n_i <= {n}")
    exponent = profile.interval_exponent if profile is not None else 0.25
    previous = as_log_space(n_repr if n_repr is not None else n)
    if i == 1:
        previous_log2 = previous.log2
    else:
        previous_value = log_iter(previous, i - 1)
        if previous_value <= 0:
            raise _log_domain_error(i - 1, previous_value)
        previous_log2 = math.log2(previous_value)
    lower = n / n_i
    upper_log2 = math.log2(n) - math.log2(n_i) + exponent * previous_log2
    upper = _exp2(upper_log2) if upper_log2 < 1023 else float(n)
    return IntegerInterval(_ceil(lower), _floor(upper))


def _check_intersection_args(n: int, d: int, q: int) -> None:
    if not 1 <= d <= n:
        raise UsageError.out_of_range("d", d, f"1 <= d <= {n}")
    if not 0 <= q <= n:
        raise UsageError.out_of_range("q", q, f"0 <= q <= {n}")


def intersect_prob_fraction(n: int, d: int, q: int) -> Fraction:
    """``1 - C(n - q, d) / C(n, d)`` as an exact rational"""
    _check_intersection_args(n, d, q)
    return 1 - Fraction(math.comb(n - q, d), math.comb(n, d))


def intersect_prob_exact(n: int, d: int, q: int) -> float:
    """Probability that a uniform d-subset of [n] meets a fixed q-subset"""
    _check_intersection_args(n, d, q)
    if n <= EXACT_BINOMIAL_LIMIT:
        return float(intersect_prob_fraction(n, d, q))
    if n - q < d:
        return 1.0
    log_ratio = (
        special.gammaln(n - q + 1)
        - special.gammaln(n - q - d + 1)
        - special.gammaln(n + 1)
        + special.gammaln(n - d + 1)
    )
    return float(-np.expm1(log_ratio))


def intersect_prob_product(n: int, d: int, q: int) -> float:
    """Same probability through ``1 - prod_{k<d} (1 - q / (n - k))``"""
    _check_intersection_args(n, d, q)
    if q > n - d:
        return 1.0
    k = np.arange(d, dtype=np.float64)
    return float(-np.expm1(np.log1p(-q / (n - k)).sum()))


def simulate_intersection_frequency(
    n: int, d: int, q: int, trials: int, seed: Seed
) -> float:
    """Empirical frequency of a uniform d-subset meeting a fixed q-subset"""
    _check_intersection_args(n, d, q)
    if trials < 1:
        raise UsageError.out_of_range("trials", trials, "trials >= 1")
    hits = seed.generator().hypergeometric(q, n - q, d, size=trials)
    return float(np.count_nonzero(hits) / trials)


class BucketedLevel(Protocol):
    @property
    def level(self) -> int:
        ...

    @property
    def universe_size(self) -> int:
        ...

    @property
    def n_i(self) -> float:
        ...

    @property
    def log_value(self) -> float:
        ...

    @property
    def bucket(self) -> Optional[int]:
        ...


@attr.frozen
class BoundEstimate:
    """Union bound on a failure event.

    In the paper profile `closed_form_log2` is the final expression of the chain
    and `limit_log2` the constant it must stay below.
    """

    value: float
    closed_form_log2: Optional[float] = None
    limit_log2: Optional[float] = None

    @property
    def holds(self) -> Optional[bool]:
        if self.closed_form_log2 is None or self.limit_log2 is None:
            return None
        return self.closed_form_log2 <= self.limit_log2


def _clamp(value: float) -> float:
    return min(1.0, max(0.0, value))


def _exp2(log2_value: float) -> float:
    try:
        return float(2.0 ** log2_value)
    except OverflowError:
        return math.inf


def _selected_bucket(params: BucketedLevel) -> int:
    if params.bucket is None:
        raise UsageError(
            ErrorInfo(
                message="Level has no selected bucket",
                code="bucket_not_selected",
                target=str(params.level),
            )
        )
    return params.bucket


def bound_M0(
    params: BucketedLevel, d: int, s_i: float, profile: ConstantsProfile
) -> BoundEstimate:
    """Union bound on a predicted-0 test meeting the defective set"""
    n = params.universe_size
    if not 1 <= d <= n / 2:
        raise UsageError.out_of_range("d", d, f"1 <= d <= n/2 = {n / 2:g}")
    j = _selected_bucket(params)
    step = profile.bucket_exponent_step
    low = params.n_i / params.log_value ** (step * (j + 1))
    value = _clamp(s_i * d * 2 * low / n)
    if not profile.is_paper:
        return BoundEstimate(value)
    tau = profile.tau
    closed = (
        1
        - (tau - params.level + 2) * math.log2(profile.c_base * tau)
        - 0.75 * math.log2(params.log_value)
    )
    return BoundEstimate(value, closed, -math.log2(300 * tau))


def bound_M1(
    params: BucketedLevel, d: int, s_i: float, profile: ConstantsProfile
) -> BoundEstimate:
    """Union bound on a predicted-1 test missing the defective set"""
    n = params.universe_size
    j = _selected_bucket(params)
    high = params.n_i / params.log_value ** (profile.bucket_exponent_step * j)
    value = _clamp(s_i * math.exp(-d * high / n))
    if not profile.is_paper:
        return BoundEstimate(value)
    if s_i <= 0:
        return BoundEstimate(value, -math.inf, -math.log2(300 * profile.tau))
    closed = math.log2(s_i) - params.log_value ** 2 * _LOG2_E
    return BoundEstimate(value, closed, -math.log2(300 * profile.tau))


def bound_W(profile: ConstantsProfile) -> float:
    """Markov bound on the residual bucket exceeding its budget"""
    if not profile.markov_slack > 1:
        raise UsageError.out_of_range("markov_slack", profile.markov_slack, "slack > 1")
    return 1.0 / profile.markov_slack


def success_lower_bound(delta: float, m0: float, m1: float, w: float) -> float:
    for name, value in (("delta", delta), ("m0", m0), ("m1", m1), ("w", w)):
        if not 0.0 <= value <= 1.0:
            raise UsageError.out_of_range(name, value, "a probability in [0, 1]")
    return max(0.0, 1.0 - delta - m0 - m1 - w)


@attr.frozen
class PaperLevelCheck:
    """Log-space evaluation of one level of the lemma at a symbolic n"""

    level: int
    log_value: float
    s_log2: float
    r_raw: float
    r: int
    m0_closed_log2: float
    m1_closed_log2: float
    limit_log2: float
    w_bound: float
    step_budget: float
    denominator_log2: float

    @property
    def m0_holds(self) -> bool:
        return self.m0_closed_log2 <= self.limit_log2

    @property
    def m1_holds(self) -> bool:
        return self.m1_closed_log2 <= self.limit_log2

    @property
    def budget_holds(self) -> bool:
        tau = 1.0 / (30.0 * self.w_bound)
        return self.step_budget <= 1.0 / (12.0 * tau)

    @property
    def holds(self) -> bool:
        return self.m0_holds and self.m1_holds and self.budget_holds


def paper_chain(
    n: Union[LogSpaceNumber, int, float, str],
    profile: Optional[ConstantsProfile] = None,
) -> List[PaperLevelCheck]:
    """Closed forms of the M0/M1/W bounds for every level with ``log^[i] n >= tau``"""
    n = as_log_space(n)
    tau = log_star(n)
    profile = profile or ConstantsProfile.paper(tau)
    limit_log2 = -math.log2(300 * tau)
    w_bound = 1.0 / (30.0 * tau)
    checks = []
    i = 1
    while True:
        log_value = log_iter(n, i)
        if log_value < tau or log_value <= 1:
            break
        denominator_log2 = (tau - i + 2) * math.log2(profile.c_base * tau)
        s_log2 = math.log2(log_value) - denominator_log2
        r_raw = log_value / (profile.bucket_divisor * math.log2(log_value))
        m0 = 1 - denominator_log2 - 0.75 * math.log2(log_value)
        m1 = s_log2 - log_value ** 2 * _LOG2_E
        budget = _exp2(m0) + _exp2(m1) + w_bound
        checks.append(
            PaperLevelCheck(
                level=i,
                log_value=log_value,
                s_log2=s_log2,
                r_raw=r_raw,
                r=bucket_count(log_value, profile),
                m0_closed_log2=m0,
                m1_closed_log2=m1,
                limit_log2=limit_log2,
                w_bound=w_bound,
                step_budget=budget,
                denominator_log2=denominator_log2,
            )
        )
        i += 1
    return checks


@attr.frozen
class CollapseReport:
    tau: int
    m_log2: float
    level: Optional[int]
    log_value: Optional[float]
    s_log2: Optional[float]
    s_limit_log2: float
    budget: Optional[float]
    anomalies: List[str] = attr.field(factory=list)

    @property
    def m(self) -> float:
        return _exp2(self.m_log2)

    @property
    def s(self) -> Optional[float]:
        return None if self.s_log2 is None else _exp2(self.s_log2)

    @property
    def ok(self) -> bool:
        return not self.anomalies


def theorem_collapse_check(
    n: Union[LogSpaceNumber, int, float, str],
    profile: Optional[ConstantsProfile] = None,
) -> CollapseReport:
    """Follows the iteration down to the level whose test budget drops below one.

    Finds l with ``log log* n < log^[l] n <= tau``, evaluates ``s_l`` and the
    remaining success budget ``2/3 - l / (12 tau)``. Failed checks are reported
    as anomalies rather than raised.
    """
    n = as_log_space(n)
    if n.log2 < 16:
        raise UsageError.out_of_range("n", str(n), "n >= 2^16")
    tau = log_star(n)
    profile = profile or ConstantsProfile.paper(tau)
    base_log2 = math.log2(profile.c_base * tau)
    m_log2 = math.log2(log_iter(n, 1)) - (tau + 1) * base_log2
    s_limit_log2 = math.log2(tau) - 2 * base_log2
    anomalies = []

    level = None
    i = 1
    log_value = log_iter(n, 1)
    while log_value > 0:
        if math.log2(tau) < log_value <= tau:
            level = i
            break
        if log_value <= 1:
            break
        log_value = math.log2(log_value)
        i += 1

    if level is None:
        anomalies.append(f"no level l with log log* n < log^[l] n <= tau={tau}")
        return CollapseReport(tau, m_log2, None, None, None, s_limit_log2, None, anomalies)

    s_log2 = math.log2(log_value) - (tau - level + 2) * base_log2
    budget = 2.0 / 3.0 - level / (12.0 * tau)

    if abs(s_formula_log2(n, 1, tau, _unfloored(profile)) - m_log2) > 1e-9:
        anomalies.append("s_1 does not match m")
    if level > 1 and log_iter(n, level - 1) < tau:
        anomalies.append(f"log^[{level - 1}] n is below tau: the lemma does not apply")
    if not s_log2 < 0:
        anomalies.append(f"s_l = 2^{s_log2:.6g} is not below 1")
    if not s_log2 <= s_limit_log2 + 1e-9:
        anomalies.append("s_l exceeds tau / (C tau)^2")
    if level > tau:
        anomalies.append(f"l = {level} exceeds tau = {tau}")
    if budget < 7.0 / 12.0:
        anomalies.append(f"success budget {budget:.6g} is below 7/12")
    return CollapseReport(
        tau, m_log2, level, log_value, s_log2, s_limit_log2, budget, anomalies
    )


def _unfloored(profile: ConstantsProfile) -> ConstantsProfile:
    return attr.evolve(profile, tau_floor=min(profile.tau_floor, 1.0))

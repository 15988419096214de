"""Experiment configuration, runners and report emission.

A run is fully determined by its `ExperimentConfig`: every random stream derives
from ``config.seed``, so re-running a configuration reproduces every data row.
"""
import csv
import io
import json
import logging
import math
import sys
import time
from enum import Enum
from typing import (
    Any,
    Dict,
    List,
    Mapping,
    Optional,
    TextIO,
    Tuple,
    Type,
    Union,
)

import attr

from gtprune import conversion
from gtprune.analysis import (
    CollapseReport,
    ConstantsProfile,
    IntegerInterval,
    LogSpaceNumber,
    bound_M0,
    bound_M1,
    bound_W,
    log_star,
    paper_chain,
    success_lower_bound,
    theorem_collapse_check,
)
from gtprune.common import SeedStream
from gtprune.errors import EmitError, ErrorInfo, LoadError, UsageError
from gtprune.reduction import (
    DEFAULT_DELTA,
    DEFAULT_SAMPLES,
    EventStats,
    LevelResult,
    initial_params,
    iterate_reduction,
    measure_events,
    next_budget,
    reduce_once,
    select_bucket,
)
from gtprune.strategies import (
    NonAdaptiveStrategy,
    bernoulli_estimator,
    constant_decoder,
    empty_strategy,
    fixed_size_strategy,
    measure_success,
)
from gtprune.universe import MAX_UNIVERSE_SIZE, Seed

__all__ = [
    "Command",
    "ReportFormat",
    "BernoulliSpec",
    "FixedSizeSpec",
    "EmptySpec",
    "StrategySpec",
    "ProfileSpec",
    "ExperimentConfig",
    "LevelRow",
    "EstimateRow",
    "BoundsRow",
    "CollapseSummary",
    "ReportMeta",
    "ExperimentReport",
    "STRATEGY_KINDS",
    "load_config",
    "config_from_mapping",
    "build_strategy",
    "run_experiment",
    "emit_report",
    "render_report",
    "read_report",
]

_logger = logging.getLogger(__name__)

try:
    from importlib.metadata import PackageNotFoundError, version

    try:
        _VERSION = version("gtprune")
    except PackageNotFoundError:
        _VERSION = "0+unknown"
except ImportError:  # pragma: no cover
    _VERSION = "0+unknown"


class Command(Enum):
    ESTIMATE = "estimate"
    REDUCE = "reduce"
    CASCADE = "cascade"
    BOUNDS = "bounds"


class ReportFormat(Enum):
    CSV = "csv"
    JSON = "json"


def _at_least(minimum: float) -> Any:
    def _validate(instance: Any, attribute: "attr.Attribute[Any]", value: Any) -> None:
        if value < minimum:
            raise UsageError.out_of_range(attribute.name, value, f">= {minimum:g}")

    return _validate


@attr.frozen
class BernoulliSpec:
    repetitions: int = attr.field(default=15, validator=_at_least(1))


@attr.frozen
class FixedSizeSpec:
    """Random tests of the given sizes; the decoder always answers `estimate`"""

    sizes: Tuple[int, ...] = attr.field(default=(), converter=tuple)
    estimate: int = attr.field(default=1, validator=_at_least(1))


@attr.frozen
class EmptySpec:
    estimate: int = attr.field(default=1, validator=_at_least(1))


StrategySpec = Union[BernoulliSpec, FixedSizeSpec, EmptySpec]

STRATEGY_KINDS: Dict[str, Type[Any]] = {
    "bernoulli": BernoulliSpec,
    "fixed_size": FixedSizeSpec,
    "empty": EmptySpec,
}

_PROFILE_NAMES = ("paper", "generalized")


def _profile_name(instance: Any, attribute: "attr.Attribute[Any]", value: Optional[str]) -> None:
    if value is not None and value not in _PROFILE_NAMES:
        raise UsageError.out_of_range(attribute.name, value, " or ".join(_PROFILE_NAMES))


@attr.frozen
class ProfileSpec:
    """Profile name plus optional overrides; without a name `bounds` uses the paper constants"""

    name: Optional[str] = attr.field(default=None, validator=_profile_name)
    c_base: Optional[float] = None
    bucket_exponent_step: Optional[float] = None
    bucket_divisor: Optional[float] = None
    markov_slack: Optional[float] = None
    tau_floor: Optional[float] = None

    def resolve_name(self, command: Command) -> str:
        if self.name is not None:
            return self.name
        return "paper" if command is Command.BOUNDS else "generalized"

    def build(self, n: LogSpaceNumber, command: Command) -> ConstantsProfile:
        overrides = {
            field.name: getattr(self, field.name)
            for field in attr.fields(ProfileSpec)
            if field.name != "name" and getattr(self, field.name) is not None
        }
        if self.resolve_name(command) == "paper":
            return attr.evolve(ConstantsProfile.paper(log_star(n)), **overrides)
        return ConstantsProfile.generalized(**overrides)


def _universe_validator(
    instance: Any, attribute: "attr.Attribute[LogSpaceNumber]", value: LogSpaceNumber
) -> None:
    if value.log2 < 2:
        raise UsageError.out_of_range(attribute.name, str(value), "n >= 4")


def _alpha_validator(instance: Any, attribute: "attr.Attribute[float]", value: float) -> None:
    if not value > 1:
        raise UsageError.out_of_range(attribute.name, value, "alpha > 1")


def _alphas_validator(
    instance: Any, attribute: "attr.Attribute[Tuple[float, ...]]", value: Tuple[float, ...]
) -> None:
    for alpha in value:
        _alpha_validator(instance, attribute, alpha)


def _seed_validator(instance: Any, attribute: "attr.Attribute[int]", value: int) -> None:
    if not 0 <= value < (1 << 64):
        raise UsageError.out_of_range(attribute.name, value, "a 64-bit unsigned integer")


def _delta_validator(instance: Any, attribute: "attr.Attribute[float]", value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise UsageError.out_of_range(attribute.name, value, "a probability in [0, 1]")


def _universe_converter(value: Union[LogSpaceNumber, int, str]) -> LogSpaceNumber:
    if isinstance(value, LogSpaceNumber):
        return value
    return LogSpaceNumber.parse(value)


@attr.frozen
class ExperimentConfig:
    command: Command = Command.CASCADE
    universe_size: LogSpaceNumber = attr.field(
        default=LogSpaceNumber.pow2(16),
        converter=_universe_converter,
        validator=_universe_validator,
    )
    strategy: StrategySpec = attr.field(factory=BernoulliSpec)
    profile: ProfileSpec = attr.field(factory=ProfileSpec)
    alpha: float = attr.field(default=2.0, validator=_alpha_validator)
    alphas: Tuple[float, ...] = attr.field(
        default=(2.0, 4.0, 8.0), converter=tuple, validator=_alphas_validator
    )
    defective: Tuple[int, ...] = attr.field(default=(), converter=tuple)
    trials: int = attr.field(default=200, validator=_at_least(1))
    seed: int = attr.field(default=0, validator=_seed_validator)
    levels: int = attr.field(default=8, validator=_at_least(1))
    samples: int = attr.field(default=DEFAULT_SAMPLES, validator=_at_least(1))
    delta: float = attr.field(default=DEFAULT_DELTA, validator=_delta_validator)
    workers: int = attr.field(default=1, validator=_at_least(1))
    format: ReportFormat = ReportFormat.CSV
    out: Optional[str] = None

    @property
    def n(self) -> int:
        """Universe size for simulation commands"""
        exact = self.universe_size.exact
        if exact is None or exact > MAX_UNIVERSE_SIZE:
            raise UsageError.out_of_range(
                "universe_size",
                str(self.universe_size),
                f"an integer n <= {MAX_UNIVERSE_SIZE} for simulation",
            )
        return exact

    def build_profile(self) -> ConstantsProfile:
        return self.profile.build(self.universe_size, self.command)

    def master_seed(self) -> Seed:
        return Seed(self.seed)


def load_config(path: str, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise UsageError(
            ErrorInfo(message=f"Cannot read config: {e.strerror}", code="config_io", target=path)
        ) from e
    except json.JSONDecodeError as e:
        raise LoadError(
            ErrorInfo(message=f"Invalid JSON: {e}", code="invalid_json", target=path)
        ) from e
    return config_from_mapping(data, overrides)


def config_from_mapping(
    data: Any, overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    """Converts a JSON document into a config; `overrides` replace top-level keys.

    A ``strategy`` override is merged into the document's strategy when both
    name the same kind.
    """
    if not isinstance(data, Mapping):
        raise LoadError(
            ErrorInfo(
                message=f"Expected a JSON object, got {type(data).__name__}",
                code="invalid_type",
            )
        )
    merged: Dict[str, Any] = dict(data)
    for key, value in (overrides or {}).items():
        current = merged.get(key)
        if key == "strategy" and isinstance(value, Mapping):
            if not isinstance(current, Mapping):
                current = {"kind": "bernoulli"}
            if value.get("kind", current.get("kind")) == current.get("kind"):
                value = {**current, **value}
        elif key == "profile" and isinstance(value, Mapping) and isinstance(current, Mapping):
            value = {**current, **value}
        merged[key] = value
    return conversion.load(ExperimentConfig, merged, context=_CONTEXT)


def build_strategy(spec: StrategySpec, n: int) -> NonAdaptiveStrategy:
    if isinstance(spec, BernoulliSpec):
        return bernoulli_estimator(n, spec.repetitions)
    if isinstance(spec, FixedSizeSpec):
        return fixed_size_strategy(n, spec.sizes, constant_decoder(spec.estimate))
    return empty_strategy(n, spec.estimate)


@attr.frozen
class LevelRow:
    """One reduction level: parameters, measured frequencies and analytic bounds"""

    level: int
    n_i: float
    s_i: float
    bucket: int
    buckets: int
    low_threshold: float
    high_threshold: float
    d_lo: int
    d_hi: int
    next_d_lo: int
    next_d_hi: int
    next_d_clipped: bool
    nested: bool
    expected_residual: float
    expected_residual_stderr: float
    mean_in_range: float
    s_next: float
    d: Optional[int]
    trials: Optional[int]
    p_m0: Optional[float]
    p_m1: Optional[float]
    p_w: Optional[float]
    success_prev: Optional[float]
    success_next: Optional[float]
    fail_rate: Optional[float]
    mean_residual: Optional[float]
    pooled_stderr: Optional[float]
    bound_m0: Optional[float]
    bound_m1: Optional[float]
    bound_w: float
    success_bound: Optional[float]
    budget: float
    identity_violations: Optional[int]
    equivalence_violations: Optional[int]


@attr.frozen
class EstimateRow:
    d: int
    alpha: float
    trials: int
    success_rate: float
    fail_rate: float
    stderr: float


@attr.frozen
class BoundsRow:
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
    holds: bool


@attr.frozen
class CollapseSummary:
    tau: int
    m_log2: float
    level: Optional[int]
    log_value: Optional[float]
    s_log2: Optional[float]
    s_limit_log2: float
    budget: Optional[float]
    anomalies: Tuple[str, ...] = attr.field(default=(), converter=tuple)


@attr.frozen
class ReportMeta:
    command: Command
    version: str
    seed: int
    universe_size: LogSpaceNumber
    profile: str
    alpha: float
    trials: int
    wall_time: float
    final_level: Optional[int] = None
    collapsed: Optional[bool] = None
    stop_reason: Optional[str] = None
    budget: Optional[float] = None
    collapse: Optional[CollapseSummary] = None
    violations: Tuple[str, ...] = attr.field(default=(), converter=tuple)


_ROW_TYPES: Dict[Command, Type[Any]] = {
    Command.ESTIMATE: EstimateRow,
    Command.REDUCE: LevelRow,
    Command.CASCADE: LevelRow,
    Command.BOUNDS: BoundsRow,
}


@attr.frozen
class ExperimentReport:
    meta: ReportMeta
    rows: Tuple[Any, ...] = attr.field(converter=tuple)

    @property
    def row_type(self) -> Type[Any]:
        return _ROW_TYPES[self.meta.command]

    @property
    def ok(self) -> bool:
        return not self.meta.violations


_CONTEXT = conversion.ReportContext()
_CONTEXT.add_factory(
    conversion.DiscriminatedConverterFactory(
        STRATEGY_KINDS, conversion.AttrsConverterFactory(), discriminator_key="kind"
    )
)


def _level_row(result: LevelResult) -> Tuple[LevelRow, List[str]]:
    params = result.params
    following = result.following
    profile = params.profile
    selection = result.selection
    low, high = params.thresholds()
    events: Optional[EventStats] = result.events
    w_bound = bound_W(profile) if profile.markov_slack > 1 else 1.0
    findings = []
    prefix = f"level {params.level}"

    if not result.nested:
        findings.append(
            f"{prefix}: D_{following.level} not inside D_{params.level},"
            f" clipped to {following.interval}"
        )
    if not selection.markov_bound_holds:
        findings.append(f"{prefix}: selected bucket above the bucket average")

    m0 = m1 = success_bound = None
    if events is not None and result.d is not None:
        m0 = bound_M0(params, result.d, params.s_i, profile).value
        m1 = bound_M1(params, result.d, params.s_i, profile).value
        success_bound = success_lower_bound(min(1.0, params.delta), m0, m1, w_bound)
        if not events.degradation_holds():
            findings.append(
                f"{prefix}: success dropped by more than P[M0]+P[M1]+P[W]"
                f" (gap {events.degradation_gap():.6g})"
            )
        for name, bound, rate in (("M0", m0, events.p_m0), ("M1", m1, events.p_m1)):
            if bound < rate - 3 * events.stderr(rate):
                findings.append(f"{prefix}: P[{name}]={rate:.6g} above its bound {bound:.6g}")
        if events.p_w > w_bound + 3 * events.stderr(events.p_w):
            findings.append(f"{prefix}: P[W]={events.p_w:.6g} above 1/slack={w_bound:.6g}")
        if events.identity_violations:
            findings.append(
                f"{prefix}: residual count differed from T_j in {events.identity_violations} trials"
            )
        if events.equivalence_violations:
            findings.append(
                f"{prefix}: permuted answers differed in {events.equivalence_violations} trials"
            )

    row = LevelRow(
        level=params.level,
        n_i=params.n_i,
        s_i=params.s_i,
        bucket=selection.bucket,
        buckets=params.bucket_total,
        low_threshold=low,
        high_threshold=high,
        d_lo=params.interval.lo,
        d_hi=params.interval.hi,
        next_d_lo=following.interval.lo,
        next_d_hi=following.interval.hi,
        next_d_clipped=following.interval_clipped,
        nested=result.nested,
        expected_residual=selection.expected_residual,
        expected_residual_stderr=selection.stderrs[selection.bucket],
        mean_in_range=selection.mean_in_range,
        s_next=following.s_i,
        d=result.d,
        trials=None if events is None else events.trials,
        p_m0=None if events is None else events.p_m0,
        p_m1=None if events is None else events.p_m1,
        p_w=None if events is None else events.p_w,
        success_prev=None if events is None else events.success_prev,
        success_next=None if events is None else events.success_next,
        fail_rate=None if events is None else events.next_failures / events.trials,
        mean_residual=None if events is None else events.mean_residual,
        pooled_stderr=None if events is None else events.pooled_stderr,
        bound_m0=m0,
        bound_m1=m1,
        bound_w=w_bound,
        success_bound=success_bound,
        budget=max(0.0, 1.0 - following.delta),
        identity_violations=None if events is None else events.identity_violations,
        equivalence_violations=None if events is None else events.equivalence_violations,
    )
    return row, findings


def _meta(config: ExperimentConfig, profile_name: str, started: float, **kwargs: Any) -> ReportMeta:
    return ReportMeta(
        command=config.command,
        version=_VERSION,
        seed=config.seed,
        universe_size=config.universe_size,
        profile=profile_name,
        alpha=config.alpha,
        trials=config.trials,
        wall_time=time.perf_counter() - started,
        **kwargs,
    )


def _defective_grid(config: ExperimentConfig, n: int) -> Tuple[int, ...]:
    if config.defective:
        for d in config.defective:
            if not 1 <= d <= n:
                raise UsageError.out_of_range("defective", d, f"1 <= d <= {n}")
        return config.defective
    return tuple(1 << k for k in range(0, n.bit_length() - 1, 2))


def _run_estimate(config: ExperimentConfig, started: float) -> ExperimentReport:
    n = config.n
    strategy = build_strategy(config.strategy, n)
    seed = config.master_seed()
    alphas = tuple(sorted(set(config.alphas) | {config.alpha}))
    rows = []
    for d in _defective_grid(config, n):
        stats = measure_success(strategy, d, config.trials, seed.child(d), alphas)
        for alpha in alphas:
            rate = stats.rate(alpha)
            rows.append(
                EstimateRow(
                    d=d,
                    alpha=alpha,
                    trials=config.trials,
                    success_rate=rate,
                    fail_rate=stats.fail_rate,
                    stderr=math.sqrt(rate * (1 - rate) / config.trials),
                )
            )
    return ExperimentReport(_meta(config, config.profile.resolve_name(config.command), started), rows)


def _run_reduce(config: ExperimentConfig, started: float) -> ExperimentReport:
    n = config.n
    profile = config.build_profile()
    strategy = build_strategy(config.strategy, n)
    seed = config.master_seed().child(1)
    params = initial_params(strategy, profile, config.delta)
    selection = select_bucket(strategy, params, config.samples, seed.child(SeedStream.SELECTION))
    params = params.with_bucket(selection.bucket)
    s_next = next_budget(params, selection)
    _, following = reduce_once(strategy, params, s_next)
    target = following.interval.intersect(IntegerInterval(1, n // 2))
    d: Optional[int] = None
    events: Optional[EventStats] = None
    if not target.is_empty:
        d = target.sample(seed.child(SeedStream.INTERVAL))
        events = measure_events(
            strategy,
            params,
            s_next,
            d,
            config.trials,
            seed.child(SeedStream.EVENTS),
            alpha=config.alpha,
            workers=config.workers,
        )
    result = LevelResult(
        params, selection, following, d, events, not following.interval_clipped
    )
    row, findings = _level_row(result)
    meta = _meta(
        config,
        profile.name,
        started,
        final_level=following.level,
        stop_reason=None if events is not None else "empty_interval",
        budget=row.budget,
        violations=findings,
    )
    return ExperimentReport(meta, [row])


def _run_cascade(config: ExperimentConfig, started: float) -> ExperimentReport:
    n = config.n
    profile = config.build_profile()
    cascade = iterate_reduction(
        build_strategy(config.strategy, n),
        profile,
        max_levels=config.levels,
        trials=config.trials,
        seed=config.master_seed(),
        alpha=config.alpha,
        samples=config.samples,
        delta=config.delta,
        workers=config.workers,
    )
    rows = []
    findings: List[str] = []
    for result in cascade.levels:
        row, level_findings = _level_row(result)
        rows.append(row)
        findings.extend(level_findings)
    meta = _meta(
        config,
        profile.name,
        started,
        final_level=cascade.final_level,
        collapsed=cascade.collapsed,
        stop_reason=cascade.stop_reason,
        budget=cascade.success_budget,
        violations=findings,
    )
    return ExperimentReport(meta, rows)


def _collapse_summary(report: CollapseReport) -> CollapseSummary:
    return CollapseSummary(
        tau=report.tau,
        m_log2=report.m_log2,
        level=report.level,
        log_value=report.log_value,
        s_log2=report.s_log2,
        s_limit_log2=report.s_limit_log2,
        budget=report.budget,
        anomalies=report.anomalies,
    )


def _run_bounds(config: ExperimentConfig, started: float) -> ExperimentReport:
    n = config.universe_size
    profile = config.build_profile()
    rows = [
        BoundsRow(
            level=check.level,
            log_value=check.log_value,
            s_log2=check.s_log2,
            r_raw=check.r_raw,
            r=check.r,
            m0_closed_log2=check.m0_closed_log2,
            m1_closed_log2=check.m1_closed_log2,
            limit_log2=check.limit_log2,
            w_bound=check.w_bound,
            step_budget=check.step_budget,
            holds=check.holds,
        )
        for check in paper_chain(n, profile)
    ]
    findings = [f"level {row.level}: closed-form bounds exceed their limits" for row in rows if not row.holds]
    collapse = None
    if n.log2 >= 16:
        summary = theorem_collapse_check(n, profile)
        collapse = _collapse_summary(summary)
        findings.extend(summary.anomalies)
    meta = _meta(
        config,
        profile.name,
        started,
        final_level=None if collapse is None else collapse.level,
        collapsed=None if collapse is None else not collapse.anomalies,
        budget=None if collapse is None else collapse.budget,
        collapse=collapse,
        violations=findings,
    )
    return ExperimentReport(meta, rows)


_RUNNERS = {
    Command.ESTIMATE: _run_estimate,
    Command.REDUCE: _run_reduce,
    Command.CASCADE: _run_cascade,
    Command.BOUNDS: _run_bounds,
}


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    started = time.perf_counter()
    _logger.info(
        "Running %s: n=%s, trials=%d, seed=%d",
        config.command.value,
        config.universe_size,
        config.trials,
        config.seed,
    )
    report = _RUNNERS[config.command](config, started)
    _logger.info(
        "%s finished in %.2fs with %d rows, %d findings",
        config.command.value,
        report.meta.wall_time,
        len(report.rows),
        len(report.meta.violations),
    )
    return report


def _columns(row_type: Type[Any]) -> List[str]:
    return [field.name for field in attr.fields(row_type)]


def _dump_rows(report: ExperimentReport) -> List[Dict[str, Any]]:
    converter = _CONTEXT.get_converter(report.row_type)
    rows = []
    for row in report.rows:
        dumped = converter.dump(row, _CONTEXT)
        rows.append(dumped)
    return rows


def _render_csv(report: ExperimentReport, stream: TextIO) -> None:
    columns = _columns(report.row_type)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    for row in _dump_rows(report):
        writer.writerow(["" if row[column] is None else row[column] for column in columns])


def _render_json(report: ExperimentReport, stream: TextIO) -> None:
    document = {
        "meta": conversion.dump(report.meta, context=_CONTEXT),
        "levels": _dump_rows(report),
    }
    json.dump(document, stream, indent=2)
    stream.write("\n")


def render_report(report: ExperimentReport, fmt: ReportFormat) -> str:
    buffer = io.StringIO()
    if fmt is ReportFormat.CSV:
        _render_csv(report, buffer)
    else:
        _render_json(report, buffer)
    return buffer.getvalue()


def emit_report(
    report: ExperimentReport, fmt: ReportFormat, path: Optional[str] = None
) -> None:
    """Writes the report to `path`, or to stdout when no path is given"""
    payload = render_report(report, fmt)
    if path is None or path == "-":
        sys.stdout.write(payload)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(payload)
    except OSError as e:
        raise EmitError(
            ErrorInfo(message=f"Cannot write report: {e.strerror}", code="emit_io", target=path)
        ) from e
    _logger.info("Report written to %s", path)


def read_report(source: Union[str, TextIO]) -> ExperimentReport:
    """Parses a JSON report produced by `emit_report` (path or open stream)"""
    try:
        if isinstance(source, str):
            with open(source, "r", encoding="utf-8") as f:
                document = json.load(f)
        else:
            document = json.load(source)
    except OSError as e:
        raise UsageError(
            ErrorInfo(message=f"Cannot read report: {e.strerror}", code="report_io", target=str(source))
        ) from e
    except json.JSONDecodeError as e:
        raise LoadError(ErrorInfo(message=f"Invalid JSON: {e}", code="invalid_json")) from e

    if not isinstance(document, Mapping) or set(document) != {"meta", "levels"}:
        raise LoadError(
            ErrorInfo(
                message="A report has exactly the keys 'meta' and 'levels'",
                code="invalid_report",
            )
        )
    meta = conversion.load(ReportMeta, document["meta"], key="meta", context=_CONTEXT)
    rows = conversion.load(
        List[_ROW_TYPES[meta.command]],  # type: ignore[index]
        document["levels"],
        key="levels",
        context=_CONTEXT,
    )
    return ExperimentReport(meta, rows)

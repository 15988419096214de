"""Command line entry point: ``gtprune {estimate,reduce,cascade,bounds} [options]``.

Exit codes: 0 on success, 1 on usage errors, 2 on domain errors or when a
report carries findings (a violated bound or invariant).
"""
import argparse
import logging
import sys
from typing import Any, Dict, NoReturn, Optional, Sequence

from gtprune.errors import BaseError, ErrorInfo, UsageError
from gtprune.harness import (
    STRATEGY_KINDS,
    Command,
    ReportFormat,
    config_from_mapping,
    emit_report,
    load_config,
    run_experiment,
)

__all__ = ["build_parser", "main"]

_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FINDINGS = 2


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(ErrorInfo(message=message, code="invalid_arguments", target=self.prog))


def _common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON experiment config; flags override its values")
    parent.add_argument("--n", dest="universe_size", help="universe size, an integer or pow2:<k>")
    parent.add_argument("--trials", type=int)
    parent.add_argument("--seed", type=int)
    parent.add_argument("--alpha", type=float, help="estimation factor, default 2")
    parent.add_argument("--alphas", type=float, nargs="+", help="factors reported by estimate")
    parent.add_argument("--profile", choices=["paper", "generalized"])
    parent.add_argument("--strategy", choices=sorted(STRATEGY_KINDS))
    parent.add_argument("--repetitions", type=int, help="Bernoulli tests per level")
    parent.add_argument("--sizes", type=int, nargs="*", help="test sizes for fixed_size")
    parent.add_argument("--estimate", type=int, help="constant answer of fixed_size/empty")
    parent.add_argument("--defective", type=int, nargs="+", help="defective counts for estimate")
    parent.add_argument("--levels", type=int, help="maximum reduction levels")
    parent.add_argument("--samples", type=int, help="draws used to pick the bucket")
    parent.add_argument("--delta", type=float, help="initial failure budget")
    parent.add_argument("--workers", type=int, help="threads running trials")
    parent.add_argument("--format", choices=[f.value for f in ReportFormat])
    parent.add_argument("--out", help="report path, stdout when omitted")
    parent.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _common_options()
    parser = _ArgumentParser(
        prog="gtprune",
        description="Simulate and check the test-pruning reduction for group-testing estimators.",
    )
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    commands.add_parser(
        Command.ESTIMATE.value, parents=[parent], help="benchmark a strategy's estimation success"
    )
    commands.add_parser(
        Command.REDUCE.value, parents=[parent], help="one reduction step with event measurement"
    )
    commands.add_parser(
        Command.CASCADE.value, parents=[parent], help="iterate the reduction until collapse"
    )
    commands.add_parser(
        Command.BOUNDS.value, parents=[parent], help="closed-form bounds in log-space, no simulation"
    )
    return parser


_PLAIN_OVERRIDES = (
    "universe_size",
    "trials",
    "seed",
    "alpha",
    "alphas",
    "defective",
    "levels",
    "samples",
    "delta",
    "workers",
    "format",
    "out",
)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {"command": args.command}
    for name in _PLAIN_OVERRIDES:
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value

    strategy: Dict[str, Any] = {}
    if args.strategy is not None:
        strategy["kind"] = args.strategy
    if args.repetitions is not None:
        strategy["repetitions"] = args.repetitions
    if args.sizes is not None:
        strategy["sizes"] = args.sizes
    if args.estimate is not None:
        strategy["estimate"] = args.estimate
    if strategy:
        overrides["strategy"] = strategy
    if args.profile is not None:
        overrides["profile"] = {"name": args.profile}
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"gtprune: error: {e}", file=sys.stderr)
        return e.exit_code

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        overrides = _overrides(args)
        if args.config is not None:
            config = load_config(args.config, overrides)
        else:
            config = config_from_mapping({}, overrides)
        report = run_experiment(config)
        emit_report(report, config.format, config.out)
    except BaseError as e:
        _logger.debug("Command failed", exc_info=True)
        print(f"gtprune: error: {e}", file=sys.stderr)
        return e.exit_code

    for finding in report.meta.violations:
        _logger.warning("Finding: %s", finding)
    return EXIT_OK if report.ok else EXIT_FINDINGS
"""Command-line experiment runner.

Subcommands: ``run`` (one scenario), ``compare`` (several scenarios side by
side), ``fairness`` (election-only study). Exit codes: 0 all invariants held,
1 usage or configuration error, 2 safety violation detected.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import List, Optional, Sequence

from . import harness
from .config import ConfigError, ScenarioConfig, load_scenario
from .election import ElectionFailed

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SAFETY = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; 2 is reserved for safety
    # violations here, so usage problems must exit 1.
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


def _build_parser() -> _Parser:
    parser = _Parser(prog="ebrc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and report metrics")
    run.add_argument("--scenario", required=True, help="scenario config file (JSON)")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--out", default=None, help="directory for report.json / metrics.csv")
    run.add_argument("--trace", action="store_true", help="also write the event trace")

    cmp_cmd = sub.add_parser("compare", help="run several scenarios side by side")
    cmp_cmd.add_argument("--scenarios", required=True, nargs="+", help="scenario files")
    cmp_cmd.add_argument("--out", default=None, help="directory for outputs")
    cmp_cmd.add_argument("--trace", action="store_true", help="also write event traces")

    fair = sub.add_parser("fairness", help="election fairness study")
    fair.add_argument("--nodes", type=int, required=True)
    fair.add_argument("--epochs", type=int, required=True)
    fair.add_argument("--poison-odd", action="store_true")
    fair.add_argument("--seed", type=int, default=0)
    fair.add_argument("--omega", type=float, default=0.4)
    fair.add_argument("--out", default=None)
    return parser


def _load(path: str) -> ScenarioConfig:
    if not os.path.exists(path):
        raise ConfigError(f"scenario file not found: {path}")
    return load_scenario(path)


def _ensure_out(out: Optional[str]) -> Optional[str]:
    if out is None:
        return None
    os.makedirs(out, exist_ok=True)
    return out


def _summary_line(report: harness.MetricsReport) -> str:
    latency = (
        f"{report.mean_latency_ms:.3f}" if report.mean_latency_ms is not None else "n/a"
    )
    tps = f"{report.tps:.1f}" if report.tps is not None else "n/a"
    return (
        f"{report.name}: protocol={report.protocol} n={report.node_count} "
        f"m={report.committee_size} rounds={report.committed_rounds}"
        f"+{report.aborted_rounds}ab latency_ms={latency} tps={tps} "
        f"messages={report.total_messages} "
        f"safety={'VIOLATED' if report.safety_violation else 'ok'}"
    )


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load(args.scenario)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
        config.validate()
    report, result = harness.run_scenario_with_result(config)
    out = _ensure_out(args.out)
    if out is not None:
        harness.write_report(
            os.path.join(out, "report.json"),
            {"schema_version": harness.SCHEMA_VERSION, "reports": [report.to_dict()]},
        )
        harness.write_metrics_csv(os.path.join(out, "metrics.csv"), [report])
        if args.trace:
            harness.write_trace(os.path.join(out, "trace.csv"), result.trace)
    print(_summary_line(report))
    return EXIT_SAFETY if report.safety_violation else EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    configs = [_load(path) for path in args.scenarios]
    reports: List[harness.MetricsReport] = []
    violated = False
    out = _ensure_out(args.out)
    for config in configs:
        report, result = harness.run_scenario_with_result(config)
        reports.append(report)
        violated = violated or report.safety_violation
        if out is not None and args.trace:
            harness.write_trace(
                os.path.join(out, f"trace_{report.name}.csv"), result.trace
            )
        print(_summary_line(report))
    payload = {
        "schema_version": harness.SCHEMA_VERSION,
        "comparison": harness.compare_reports(reports),
        "reports": [report.to_dict() for report in reports],
    }
    if out is not None:
        harness.write_report(os.path.join(out, "report.json"), payload)
        harness.write_metrics_csv(os.path.join(out, "metrics.csv"), reports)
    return EXIT_SAFETY if violated else EXIT_OK


def _cmd_fairness(args: argparse.Namespace) -> int:
    report = harness.fairness_experiment(
        args.nodes,
        args.epochs,
        poison_odd=args.poison_odd,
        seed=args.seed,
        omega=args.omega,
    )
    out = _ensure_out(args.out)
    if out is not None:
        harness.write_report(os.path.join(out, "fairness.json"), report)
    line = (
        f"fairness: nodes={report['node_count']} epochs={report['epochs']} "
        f"poison_odd={report['poison_odd']} chi2={report['chi_square']:.3f} "
        f"p={report['p_value']:.4f} counts=[{report['min_count']}, {report['max_count']}]"
    )
    if report["poison_odd"]:
        ratio = report["demotion_ratio"]
        line += f" demotion_ratio={ratio:.3f}" if ratio is not None else " demotion_ratio=n/a"
    print(line)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "fairness":
            return _cmd_fairness(args)
        parser.error(f"unknown command {args.command!r}")
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ElectionFailed as exc:
        print(f"error: election failed: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except harness.ConsistencyError as exc:
        print(f"error: internal consistency check failed: {exc}", file=sys.stderr)
        return EXIT_SAFETY


if __name__ == "__main__":
    sys.exit(main())

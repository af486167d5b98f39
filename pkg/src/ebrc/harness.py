"""Metric computation, fairness studies, comparisons, and report writing.

Everything here is a pure function of its inputs: reports carry only
simulated-time quantities (no wall clocks, no environment), so a scenario
re-run with the same seed serializes byte-identically.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from . import reputation
from .config import ScenarioConfig
from .crypto import VRF_RANGE, KeyRegistry, SimulatedVrf, derive_seed, digest, pack
from .election import (
    MAX_ELECTION_RETRIES,
    ElectionConfig,
    ElectionFailed,
    form_committee,
)
from .runner import RunResult, ScenarioRunner
from .simnet import TraceRecord

SCHEMA_VERSION = 1

EMPTY_COMMITTEE_NOTE = (
    "frequency agrees with the analytic (1 - omega)**n; the 0.01% figure "
    "sometimes quoted for omega=0.4, n=10 is inconsistent with this model "
    "and is not reproduced"
)


# --- elementary metric ops ---

def compute_latency(submit_time: float, complete_time: float) -> float:
    """Confirmation latency: completion minus submission, simulated ms."""
    if complete_time < submit_time:
        raise ValueError("complete_time precedes submit_time")
    return complete_time - submit_time


def compute_tps(committed_tx_total: int, interval_seconds: float) -> Optional[float]:
    """Committed transactions per simulated second; None when the interval
    is empty (throughput is undefined, reported as absent)."""
    if interval_seconds < 0:
        raise ValueError("interval_seconds must be >= 0")
    if committed_tx_total < 0:
        raise ValueError("committed_tx_total must be >= 0")
    if interval_seconds == 0:
        return None
    return committed_tx_total / interval_seconds


@dataclass(slots=True)
class MessageCounts:
    total: int
    by_tag: Dict[str, int]
    by_round: Dict[int, int]


def count_messages(trace: Sequence[TraceRecord]) -> MessageCounts:
    """Tally sent messages from a trace, grouped by tag and by round."""
    by_tag: Dict[str, int] = {}
    by_round: Dict[int, int] = {}
    for record in trace:
        by_tag[record.tag] = by_tag.get(record.tag, 0) + 1
        by_round[record.round_index] = by_round.get(record.round_index, 0) + 1
    return MessageCounts(total=len(trace), by_tag=by_tag, by_round=by_round)


@dataclass(slots=True)
class FairnessStats:
    chi_square: float
    p_value: float
    min_count: int
    max_count: int


def fairness_stats(election_counts: Mapping[int, int]) -> FairnessStats:
    """Chi-square of observed election counts against a uniform expectation."""
    if len(election_counts) < 2:
        raise ValueError("fairness statistics need at least 2 nodes")
    counts = [election_counts[node] for node in sorted(election_counts)]
    if sum(counts) <= 0:
        raise ValueError("no elections recorded")
    statistic, p_value = stats.chisquare(counts)
    return FairnessStats(
        chi_square=float(statistic),
        p_value=float(p_value),
        min_count=min(counts),
        max_count=max(counts),
    )


# --- scenario reports ---

@dataclass(slots=True)
class MetricsReport:
    schema_version: int
    name: str
    protocol: str
    node_count: int
    committee_size: int
    fault_budget: int
    seed: int
    epochs: int
    rounds_per_epoch: int
    committed_rounds: int
    aborted_rounds: int
    latency_ms: List[float]
    mean_latency_ms: Optional[float]
    median_latency_ms: Optional[float]
    p95_latency_ms: Optional[float]
    tps: Optional[float]
    duration_ms: float
    total_messages: int
    messages_by_tag: Dict[str, int]
    messages_by_round: Dict[int, int]
    election_counts: Dict[int, int]
    view_changes_total: int
    max_view_changes_per_height: int
    membership_events: List[dict]
    membership_flows: List[dict]
    confirmed_reports: List[dict]
    stalled_memberships: List[dict]
    blocks: List[dict]
    safety_violation: bool
    safety_details: List[str]
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        raw = asdict(self)
        # JSON object keys must be strings; keep them sortable.
        raw["messages_by_round"] = {str(k): v for k, v in self.messages_by_round.items()}
        raw["election_counts"] = {str(k): v for k, v in self.election_counts.items()}
        return raw


def build_report(result: RunResult) -> MetricsReport:
    config = result.config
    counts = count_messages(result.trace)
    latencies = list(result.latency_samples_ms)
    mean_latency = float(np.mean(latencies)) if latencies else None
    median_latency = float(np.median(latencies)) if latencies else None
    p95_latency = float(np.percentile(latencies, 95)) if latencies else None
    committee_size = config.node_count
    fault_budget = (config.node_count - 1) // 3
    if result.election_log:
        committee_size = len(result.election_log[0]["consensus_nodes"])
        fault_budget = result.election_log[0]["f"]
    return MetricsReport(
        schema_version=SCHEMA_VERSION,
        name=config.name,
        protocol=config.protocol,
        node_count=config.node_count,
        committee_size=committee_size,
        fault_budget=fault_budget,
        seed=config.seed,
        epochs=config.epochs,
        rounds_per_epoch=config.rounds_per_epoch,
        committed_rounds=result.committed_rounds,
        aborted_rounds=result.aborted_rounds,
        latency_ms=latencies,
        mean_latency_ms=mean_latency,
        median_latency_ms=median_latency,
        p95_latency_ms=p95_latency,
        tps=result.tps,
        duration_ms=result.duration_ms,
        total_messages=counts.total,
        messages_by_tag=dict(sorted(counts.by_tag.items())),
        messages_by_round=dict(sorted(counts.by_round.items())),
        election_counts=dict(sorted(result.election_counts.items())),
        view_changes_total=result.view_changes_total,
        max_view_changes_per_height=result.max_view_changes_per_height,
        membership_events=list(result.membership_log),
        membership_flows=list(result.membership_flows),
        confirmed_reports=list(result.confirmed_reports),
        stalled_memberships=list(result.stalled_memberships),
        blocks=list(result.blocks),
        safety_violation=result.safety_violation,
        safety_details=list(result.safety_details),
    )


class ConsistencyError(RuntimeError):
    """Raised when trace-derived metrics disagree with live counters."""


def verify_consistency(report: MetricsReport, result: RunResult) -> None:
    """Two-path check: metrics recomputed from the raw trace/blocks must
    match the values accumulated during the run."""
    counters = result.counters
    counts = count_messages(result.trace)
    if counts.total != counters.sent:
        raise ConsistencyError(
            f"trace rows {counts.total} != sent counter {counters.sent}"
        )
    if counts.by_tag != counters.per_tag:
        raise ConsistencyError("per-tag counts from trace disagree with counters")
    delivered = sum(1 for r in result.trace if r.delivered)
    if delivered != counters.delivered:
        raise ConsistencyError(
            f"delivered rows {delivered} != delivered counter {counters.delivered}"
        )
    committed_tx = sum(b["tx_count"] for b in result.blocks)
    if result.duration_ms > 0:
        recomputed = compute_tps(committed_tx, result.duration_ms / 1_000.0)
        if report.tps is None or recomputed is None:
            raise ConsistencyError("tps missing despite a nonzero interval")
        if abs(recomputed - report.tps) > 1e-9 * max(1.0, abs(recomputed)):
            raise ConsistencyError(f"tps {report.tps} != recomputed {recomputed}")
    round_latencies = [
        r.latency_ms for r in result.rounds if r.latency_ms is not None
    ]
    if round_latencies != report.latency_ms:
        raise ConsistencyError("per-round latency list disagrees with samples")
    if report.latency_ms:
        recomputed_mean = sum(report.latency_ms) / len(report.latency_ms)
        if abs(recomputed_mean - (report.mean_latency_ms or 0.0)) > 1e-9:
            raise ConsistencyError("mean latency disagrees with recomputation")


def run_scenario(config: ScenarioConfig) -> MetricsReport:
    report, _ = run_scenario_with_result(config)
    return report


def run_scenario_with_result(config: ScenarioConfig) -> Tuple[MetricsReport, RunResult]:
    result = ScenarioRunner(config).run()
    report = build_report(result)
    verify_consistency(report, result)
    return report, result


# --- comparison ---

PROTOCOL_TRAITS = {
    "ebrc": {
        "consensus_phases": 2,
        "election": "reputation-gated sortition",
        "dynamic_membership": True,
        "message_law": "(m-1) + m(m-1) + m",
    },
    "pbft": {
        "consensus_phases": 3,
        "election": "static rotation",
        "dynamic_membership": False,
        "message_law": "(n-1) + (n-1)^2 + n(n-1) + n",
    },
}


def compare_reports(reports: Sequence[MetricsReport]) -> dict:
    """Lay finished reports side by side with per-protocol traits."""
    rows = []
    for report in reports:
        phase_total = sum(report.messages_by_tag.values())
        if phase_total != report.total_messages:
            raise ConsistencyError("per-tag totals do not sum to the total count")
        rows.append(
            {
                "name": report.name,
                "protocol": report.protocol,
                "node_count": report.node_count,
                "committee_size": report.committee_size,
                "seed": report.seed,
                "committed_rounds": report.committed_rounds,
                "aborted_rounds": report.aborted_rounds,
                "mean_latency_ms": report.mean_latency_ms,
                "tps": report.tps,
                "total_messages": report.total_messages,
                "messages_by_tag": report.messages_by_tag,
                "view_changes_total": report.view_changes_total,
                "safety_violation": report.safety_violation,
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "rows": rows,
        "traits": {
            protocol: PROTOCOL_TRAITS[protocol]
            for protocol in sorted({r["protocol"] for r in rows})
        },
    }


def compare(configs: Sequence[ScenarioConfig]) -> dict:
    """Run each scenario and lay the measured quantities side by side."""
    return compare_reports([run_scenario(config) for config in configs])


# --- fairness experiments ---

def _fairness_table(
    node_count: int,
    registry: KeyRegistry,
    *,
    poison_odd: bool,
    weights: reputation.ReputationWeights,
) -> reputation.BehaviorTable:
    table: reputation.BehaviorTable = {}
    for node in range(node_count):
        table[node] = reputation.new_record(node, registry.public_key(node), 100.0)
    if poison_odd:
        for node in range(1, node_count, 2):
            record = table[node]
            record.consensus_participations = 10
            record.reported_evil_count = 3  # evil rate 0.3
    return reputation.update_behavior_table(table, [], weights=weights)


def fairness_experiment(
    node_count: int,
    epochs: int,
    *,
    poison_odd: bool = False,
    seed: int = 0,
    omega: float = 0.4,
    eligibility_percentile: Optional[float] = None,
) -> dict:
    """Repeated elections over a fixed table, counting who gets seats.

    Two counters are reported: ``membership_counts`` (elected into the
    committee, consensus or candidate) and ``consensus_counts`` (seated as
    a consensus node). The membership counter is the one tested for
    uniformity; the consensus counter exposes the reputation rank cut,
    which is what demotes poisoned nodes.

    The unpoisoned experiment defaults to full eligibility so no spare
    band exists: among equal reputations the candidate/spare boundary can
    only tie-break on node id, which would put a deterministic id bias
    into the membership counter that says nothing about election fairness.
    The poisoned experiment keeps the protocol default.
    """
    if node_count < 2:
        raise ValueError("fairness experiment needs at least 2 nodes")
    if epochs < 1:
        raise ValueError("fairness experiment needs at least 1 epoch")
    if eligibility_percentile is None:
        eligibility_percentile = 0.85 if poison_odd else 1.0

    registry = KeyRegistry(digest(pack(seed), domain=b"fairness-keys"))
    for node in range(node_count):
        registry.register(node)
    weights = reputation.ReputationWeights()
    table = _fairness_table(node_count, registry, poison_odd=poison_odd, weights=weights)
    config = ElectionConfig(
        sortition_threshold=omega,
        target_committee_size=4,
        eligibility_percentile=eligibility_percentile,
        consensus_percentile=0.5,
    )

    membership_counts = {node: 0 for node in range(node_count)}
    consensus_counts = {node: 0 for node in range(node_count)}
    base = digest(pack(seed), domain=b"fairness-epochs")
    failed_epochs = 0
    for epoch in range(epochs):
        epoch_seed = digest(base, epoch.to_bytes(8, "big"), domain=b"fairness-epoch")
        assignment = None
        for _ in range(MAX_ELECTION_RETRIES + 1):
            try:
                assignment, _reports = form_committee(
                    table, config, epoch_seed, registry, epoch=epoch
                )
                break
            except ElectionFailed:
                epoch_seed = derive_seed(epoch_seed)
        if assignment is None:
            failed_epochs += 1
            continue
        for node in assignment.consensus_nodes:
            membership_counts[node] += 1
            consensus_counts[node] += 1
        for node in assignment.candidates:
            membership_counts[node] += 1

    uniformity = fairness_stats(membership_counts)
    report = {
        "schema_version": SCHEMA_VERSION,
        "node_count": node_count,
        "epochs": epochs,
        "failed_epochs": failed_epochs,
        "poison_odd": poison_odd,
        "omega": omega,
        "eligibility_percentile": eligibility_percentile,
        "seed": seed,
        "membership_counts": {str(k): v for k, v in sorted(membership_counts.items())},
        "consensus_counts": {str(k): v for k, v in sorted(consensus_counts.items())},
        "chi_square": uniformity.chi_square,
        "p_value": uniformity.p_value,
        "min_count": uniformity.min_count,
        "max_count": uniformity.max_count,
    }
    if poison_odd:
        odd = [consensus_counts[n] for n in range(1, node_count, 2)]
        even = [consensus_counts[n] for n in range(0, node_count, 2)]
        odd_mean = sum(odd) / len(odd)
        even_mean = sum(even) / len(even)
        report["poisoned_mean_consensus"] = odd_mean
        report["honest_mean_consensus"] = even_mean
        report["demotion_ratio"] = (odd_mean / even_mean) if even_mean > 0 else None
    return report


def empty_committee_probability(
    node_count: int = 10,
    omega: float = 0.4,
    trials: int = 100_000,
    seed: int = 0,
) -> dict:
    """Monte Carlo frequency of a sortition selecting nobody, using the real
    draw machinery, against the analytic (1 - omega)**n."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    registry = KeyRegistry(digest(pack(seed), domain=b"empty-committee-keys"))
    secrets = [registry.register(node).secret_key for node in range(node_count)]
    vrf = SimulatedVrf(registry)
    threshold = int(omega * VRF_RANGE)
    base = digest(pack(seed), domain=b"empty-committee-trials")
    empty = 0
    for trial in range(trials):
        trial_seed = digest(base, trial.to_bytes(8, "big"), domain=b"trial")
        if all(vrf.evaluate(sk, trial_seed).value > threshold for sk in secrets):
            empty += 1
    frequency = empty / trials
    return {
        "schema_version": SCHEMA_VERSION,
        "node_count": node_count,
        "omega": omega,
        "trials": trials,
        "empty_count": empty,
        "frequency": frequency,
        "analytic": (1.0 - omega) ** node_count,
        "note": EMPTY_COMMITTEE_NOTE,
    }


# --- serialization ---

def report_json(payload: dict) -> str:
    """Canonical report text: sorted keys, fixed separators, trailing newline."""
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_report(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_json(payload))


CSV_METRICS = (
    "mean_latency_ms",
    "median_latency_ms",
    "p95_latency_ms",
    "tps",
    "duration_ms",
    "total_messages",
    "committed_rounds",
    "aborted_rounds",
    "view_changes_total",
    "max_view_changes_per_height",
    "safety_violation",
)


def metrics_csv(reports: Sequence[MetricsReport]) -> str:
    """One row per (protocol, node_count, seed, metric)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["protocol", "node_count", "seed", "metric", "value"])
    for report in reports:
        for metric in CSV_METRICS:
            value = getattr(report, metric)
            if value is None:
                rendered = ""
            elif isinstance(value, bool):
                rendered = "1" if value else "0"
            elif isinstance(value, float):
                rendered = repr(value)
            else:
                rendered = str(value)
            writer.writerow(
                [report.protocol, report.node_count, report.seed, metric, rendered]
            )
        for tag in sorted(report.messages_by_tag):
            writer.writerow(
                [
                    report.protocol,
                    report.node_count,
                    report.seed,
                    f"messages_{tag}",
                    str(report.messages_by_tag[tag]),
                ]
            )
    return buffer.getvalue()


def write_metrics_csv(path: str, reports: Sequence[MetricsReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(metrics_csv(reports))


def trace_csv(trace: Iterable[TraceRecord]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        ["time_us", "sender", "target", "tag", "digest_prefix", "round_index", "delivered"]
    )
    for record in trace:
        writer.writerow(
            [
                record.time_us,
                record.sender,
                record.target,
                record.tag,
                record.digest_prefix,
                record.round_index,
                "1" if record.delivered else "0",
            ]
        )
    return buffer.getvalue()


def write_trace(path: str, trace: Iterable[TraceRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(trace_csv(trace))

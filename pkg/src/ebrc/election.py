"""Committee election: reputation gating plus verifiable random sortition.

Eligibility is a double ranking gate (a node must sit in the top slice by
reputation AND by growth rate). Eligible nodes draw from the VRF against the
epoch seed and self-select when value / 2**256 <= sortition_threshold. The
verified selectees are ranked by reputation and split into consensus nodes,
candidate consensus nodes, and inactive spares. Rank ties always break toward
the lower node id so the whole pipeline is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .crypto import VRF_RANGE, KeyRegistry, SimulatedVrf, Vrf
from .reputation import BehaviorTable

#: Elections are retried with a re-derived seed at most this many times.
MAX_ELECTION_RETRIES = 16

MIN_COMMITTEE = 4


class ElectionFailed(Exception):
    """Raised when too few verified selectees exist to form a committee."""


@dataclass(frozen=True, slots=True)
class ElectionConfig:
    """Knobs for one epoch's election.

    ``target_committee_size`` is the minimum number of verified selectees
    required before the partition runs; below it the election fails and the
    caller retries with a re-derived seed.
    """

    sortition_threshold: float = 0.4
    target_committee_size: int = MIN_COMMITTEE
    eligibility_percentile: float = 0.85
    consensus_percentile: float = 0.5
    connect_window_ms: Optional[float] = None

    def validate(self) -> None:
        if not (0.0 < self.sortition_threshold <= 1.0):
            raise ValueError("sortition_threshold must lie in (0, 1]")
        if self.target_committee_size < MIN_COMMITTEE:
            raise ValueError(f"target_committee_size must be >= {MIN_COMMITTEE}")
        if not (0.0 < self.consensus_percentile <= self.eligibility_percentile <= 1.0):
            raise ValueError(
                "need 0 < consensus_percentile <= eligibility_percentile <= 1"
            )
        if self.connect_window_ms is not None and self.connect_window_ms <= 0:
            raise ValueError("connect_window_ms must be positive")


@dataclass(frozen=True, slots=True)
class CommitteeAssignment:
    """Result of one election: the committee and its derived parameters.

    ``consensus_nodes`` is ordered by descending reputation (ties by node id);
    master selection indexes into this order. ``f`` is floor((m-1)/3) of the
    consensus-node count.
    """

    epoch: int
    seed: bytes
    consensus_nodes: Tuple[int, ...]
    candidates: Tuple[int, ...]
    spares: Tuple[int, ...]
    f: int
    master_index: int

    @property
    def committee(self) -> Tuple[int, ...]:
        """Consensus nodes plus candidates; the elected set counted as members."""
        return self.consensus_nodes + self.candidates

    def validate(self) -> None:
        m = len(self.consensus_nodes)
        if m < MIN_COMMITTEE:
            raise ValueError("consensus-node set smaller than the minimum committee")
        if self.f != (m - 1) // 3:
            raise ValueError("f inconsistent with committee size")
        groups = (set(self.consensus_nodes), set(self.candidates), set(self.spares))
        if sum(len(g) for g in groups) != len(set().union(*groups)):
            raise ValueError("committee partitions overlap")
        if not (0 <= self.master_index < 3 * self.f + 1):
            raise ValueError("master index out of range")


def _cutoff(count: int, percentile: float) -> int:
    # Epsilon guards against float artifacts like 0.85 * 20 = 16.999...
    return int(math.floor(count * percentile + 1e-9))


def _ranked(table: BehaviorTable, key) -> List[int]:
    return [
        node_id
        for node_id, _ in sorted(
            ((nid, key(rec)) for nid, rec in table.items()),
            key=lambda item: (-item[1], item[0]),
        )
    ]


def rank_by_reputation(table: BehaviorTable) -> List[int]:
    return _ranked(table, lambda record: record.reputation)


def rank_by_growth(table: BehaviorTable) -> List[int]:
    return _ranked(table, lambda record: record.growth_rate)


def _top_slice(table: BehaviorTable, key, keep: int) -> Set[int]:
    """Ids whose key value ties or beats the value at the keep-th rank.

    The cut is by value, not by rank, so nodes tied with the boundary are all
    admitted: with identical scores a rank cut would exclude nodes purely by
    id, which no protocol rule justifies.
    """
    if keep <= 0:
        return set()
    ranked = _ranked(table, key)
    if keep >= len(ranked):
        return set(ranked)
    boundary = key(table[ranked[keep - 1]])
    return {nid for nid in ranked if key(table[nid]) >= boundary}


def eligible_nodes(table: BehaviorTable, eligibility_percentile: float) -> Set[int]:
    """Nodes inside the top slice of BOTH rankings."""
    keep = _cutoff(len(table), eligibility_percentile)
    by_reputation = _top_slice(table, lambda record: record.reputation, keep)
    by_growth = _top_slice(table, lambda record: record.growth_rate, keep)
    return by_reputation & by_growth


def is_eligible(node_id: int, table: BehaviorTable, eligibility_percentile: float = 0.85) -> bool:
    """True iff the node ranks inside the top slice by reputation and growth."""
    if node_id not in table:
        return False
    return node_id in eligible_nodes(table, eligibility_percentile)


def form_committee(
    table: BehaviorTable,
    config: ElectionConfig,
    seed: bytes,
    registry: KeyRegistry,
    *,
    vrf: Optional[Vrf] = None,
    corrupt_proofs: Set[int] = frozenset(),
    epoch: int = 0,
    initial_height: int = 0,
) -> Tuple[CommitteeAssignment, List[Tuple[int, str]]]:
    """Run one election and return (assignment, misbehavior reports).

    Every eligible node evaluates the VRF on ``seed`` and self-selects when
    its draw falls below the sortition threshold. Draws are re-verified
    through the registry; selectees whose proofs fail verification are
    excluded and reported (``corrupt_proofs`` is the simulation hook that
    mangles specific nodes' proofs). Raises ElectionFailed when fewer than
    max(4, target_committee_size) verified selectees remain.
    """
    config.validate()
    if vrf is None:
        vrf = SimulatedVrf(registry)

    eligible = eligible_nodes(table, config.eligibility_percentile)
    if len(eligible) < MIN_COMMITTEE:
        raise ElectionFailed(
            f"only {len(eligible)} eligible nodes; need at least {MIN_COMMITTEE}"
        )

    threshold = config.sortition_threshold * VRF_RANGE
    reports: List[Tuple[int, str]] = []
    verified: List[int] = []
    for node_id in sorted(eligible):
        draw = vrf.evaluate(registry.secret_key(node_id), seed)
        if draw.value > threshold:
            continue
        proof = draw.proof
        if node_id in corrupt_proofs:
            proof = bytes([proof[0] ^ 0xFF]) + proof[1:]
        ok, value = vrf.verify(registry.public_key(node_id), seed, proof)
        if not ok or value != draw.value:
            reports.append((node_id, "invalid-sortition-proof"))
            continue
        verified.append(node_id)

    required = max(MIN_COMMITTEE, config.target_committee_size)
    if len(verified) < required:
        raise ElectionFailed(
            f"{len(verified)} verified selectees; need at least {required}"
        )

    verified.sort(key=lambda nid: (-table[nid].reputation, nid))
    n_sel = len(verified)
    # The consensus slice is floored at 4 members: master selection and the
    # 2f+1 quorum rule presuppose a real committee.
    n_cons = min(n_sel, max(MIN_COMMITTEE, _cutoff(n_sel, config.consensus_percentile)))
    n_elig = max(n_cons, _cutoff(n_sel, config.eligibility_percentile))

    consensus = tuple(verified[:n_cons])
    candidates = tuple(verified[n_cons:n_elig])
    spares = tuple(verified[n_elig:])
    f = (len(consensus) - 1) // 3
    assignment = CommitteeAssignment(
        epoch=epoch,
        seed=seed,
        consensus_nodes=consensus,
        candidates=candidates,
        spares=spares,
        f=f,
        master_index=initial_height % (3 * f + 1),
    )
    assignment.validate()
    return assignment, reports

"""Dynamic membership: committee exits, candidate promotion, replacement.

Pure decision helpers plus the bookkeeping state the replicas carry. The
rule throughout: a committee of size m tolerates f = (m - 1) // 3 faults, and
no exit may drop the committee below 3f + 1 (f taken before the exit).
When it would, the highest-reputation candidate is promoted first and the
exit finalizes behind the join.
"""

from __future__ import annotations

from bisect import insort
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple


def committee_fault_budget(size: int) -> int:
    if size < 1:
        raise ValueError("committee cannot be empty")
    return (size - 1) // 3


def exit_preserves_floor(size: int, f: int) -> bool:
    """True when one departure keeps the committee at 3f+1 or better."""
    return size - 1 >= 3 * f + 1


def promotion_candidate(candidates: Sequence[int], reputation: Dict[int, float]) -> Optional[int]:
    """Highest-reputation candidate; ties break toward the lower node id."""
    if not candidates:
        return None
    return min(candidates, key=lambda n: (-reputation.get(n, 0.0), n))


def committee_with_join(
    committee: Sequence[int], reputation: Dict[int, float], joiner: int
) -> Tuple[int, ...]:
    """Insert the joiner at its reputation rank (descending, id ascending)."""
    keyed = [((-reputation.get(n, 0.0), n), n) for n in committee]
    insort(keyed, ((-reputation.get(joiner, 0.0), joiner), joiner))
    return tuple(n for _, n in keyed)


def committee_without(committee: Sequence[int], leaver: int) -> Tuple[int, ...]:
    return tuple(n for n in committee if n != leaver)


@dataclass(frozen=True, slots=True)
class ExitDecision:
    allowed: bool
    promote: Optional[int]  # candidate to bring in first, if the floor needs it
    stalled: bool  # floor would break and no candidate exists


def process_exit(
    *,
    committee: Sequence[int],
    f: int,
    candidates: Sequence[int],
    reputation: Dict[int, float],
    leaver: int,
) -> ExitDecision:
    """Decide whether an exit can proceed directly, needs a promotion, or stalls."""
    if leaver not in committee:
        return ExitDecision(allowed=False, promote=None, stalled=False)
    if exit_preserves_floor(len(committee), f):
        return ExitDecision(allowed=True, promote=None, stalled=False)
    candidate = promotion_candidate(candidates, reputation)
    if candidate is None:
        return ExitDecision(allowed=False, promote=None, stalled=True)
    return ExitDecision(allowed=True, promote=candidate, stalled=False)


@dataclass(frozen=True, slots=True)
class ReplacementPlan:
    expel: bool
    promote: Optional[int]
    stalled: bool


def replace_faulty(
    *,
    committee: Sequence[int],
    f: int,
    candidates: Sequence[int],
    reputation: Dict[int, float],
    accused: int,
) -> ReplacementPlan:
    """Plan the forced removal of a convicted member.

    Removal always happens if the floor survives; otherwise a candidate is
    promoted in the same transition. With no candidate the removal is held
    (stalled) rather than sacrificing the fault budget.
    """
    if accused not in committee:
        return ReplacementPlan(expel=False, promote=None, stalled=False)
    if exit_preserves_floor(len(committee), f):
        return ReplacementPlan(expel=True, promote=None, stalled=False)
    candidate = promotion_candidate(candidates, reputation)
    if candidate is None:
        return ReplacementPlan(expel=False, promote=None, stalled=True)
    return ReplacementPlan(expel=True, promote=candidate, stalled=False)


# Message budget of each flow, committee size m:
#   exit alone:   1 ERequest + (m-1) ExitCommit            = m
#   promotion:    1 Change + m URequest + m JoinCommit     = 2m + 1
#   exit + join:  both flows                               = 3m + 1
def exit_message_count(size: int) -> int:
    return size


def join_message_count(size: int) -> int:
    return 2 * size + 1


def exit_with_promotion_message_count(size: int) -> int:
    return exit_message_count(size) + join_message_count(size)


@dataclass(slots=True)
class MembershipState:
    """Per-replica record of in-flight membership transitions.

    Transitions are registered when their protocol messages arrive and are
    applied by the round orchestrator once the chain reaches the effective
    height, so every honest replica switches committees on the same round
    boundary.
    """

    pending_exits: Dict[int, int] = field(default_factory=dict)  # node -> height
    pending_joins: Dict[int, int] = field(default_factory=dict)  # node -> height
    join_confirms: Dict[int, Set[int]] = field(default_factory=dict)
    exit_signatures: Dict[int, bytes] = field(default_factory=dict)
    joins_blocking_exit: Dict[int, int] = field(default_factory=dict)  # candidate -> leaver

    def due_exits(self, height: int) -> List[int]:
        return sorted(n for n, h in self.pending_exits.items() if h <= height)

    def due_joins(self, height: int) -> List[int]:
        return sorted(n for n, h in self.pending_joins.items() if h <= height)

    def clear_applied(self, nodes: Sequence[int]) -> None:
        for n in nodes:
            self.pending_exits.pop(n, None)
            self.pending_joins.pop(n, None)
            self.join_confirms.pop(n, None)
            self.exit_signatures.pop(n, None)
            self.joins_blocking_exit.pop(n, None)

"""Replica state machines: the two-phase committee protocol and the
three-phase PBFT baseline.

Both replicas are deterministic event-driven state machines: ``step(now,
event)`` consumes one delivered message or timer tick and returns the
messages to send plus the timers to arm. All nondeterminism (latency, jitter,
Byzantine transforms) lives in the network layer, never here.

Quorum bookkeeping is keyed per view. A vote tally that ignored views could
mix votes for the same digest across a view change and double-commit under
message loss; per-view tallies restore the standard intersection argument
(two 2f+1 quorums among 3f+1 nodes share an honest voter, and an honest voter
votes once per view).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .crypto import ZERO_HASH, digest
from .messages import (
    BlockAnnounce,
    ChangeNotice,
    Commit,
    ExitCommit,
    ExitRequest,
    ForwardedRequest,
    JoinCommit,
    JoinRequest,
    PbftCommit,
    PbftPrepare,
    PrePrepare,
    Prepare,
    Reply,
    Report,
    Request,
    ViewChange,
    signed,
    signature_ok,
)
from . import djep

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class TimerTick:
    """Self-addressed timer event; stale ticks are ignored by key mismatch."""

    kind: str  # "batch" or "round"
    height: int
    view: int


@dataclass(frozen=True, slots=True)
class Block:
    height: int
    view: int
    previous_hash: bytes
    batch_digests: Tuple[bytes, ...]
    tx_count: int
    block_digest: bytes
    committers: Tuple[int, ...]


def block_digest_of(previous_hash: bytes, height: int, batch_digests: Sequence[bytes]) -> bytes:
    # View and committer set are deliberately excluded: honest replicas can
    # record different views/committers for the same block, and the election
    # seed chain needs a network-uniform hash.
    return digest(previous_hash, height.to_bytes(8, "big"), *batch_digests, domain=b"block")


GENESIS_BLOCK = Block(
    height=0,
    view=0,
    previous_hash=ZERO_HASH,
    batch_digests=(),
    tx_count=0,
    block_digest=ZERO_HASH,
    committers=(),
)


class QuorumConflict(Exception):
    """Two digests reached quorum in one view: fault budget exceeded."""


def select_master(height: int, view: int, f: int) -> int:
    """Rotating master index: (height + view) mod (3f + 1)."""
    if f < 0:
        raise ValueError("f must be >= 0")
    return (height + view) % (3 * f + 1)


def check_quorum(tally: Dict[bytes, Set[int]], f: int) -> Optional[bytes]:
    """Digest backed by >= 2f+1 distinct senders, or None.

    Raises QuorumConflict when two digests qualify simultaneously, which is
    impossible within the f fault budget and is surfaced as a safety fault.
    """
    threshold = 2 * f + 1
    winners = [d for d, senders in tally.items() if len(senders) >= threshold]
    if len(winners) > 1:
        raise QuorumConflict(f"{len(winners)} digests reached {threshold} votes")
    return winners[0] if winners else None


def tx_digest(payload: bytes) -> bytes:
    return digest(payload, domain=b"tx")


def canonical_batch(buffer: Dict[bytes, Request], cap: int) -> Tuple[Request, ...]:
    """Deterministic batch assembly: sort by (timestamp, client, digest), cap.

    Determinism here is what lets a post-view-change master reproduce the
    previous proposal from its own buffer.
    """
    ordered = sorted(buffer.values(), key=lambda r: (r.timestamp, r.client_id, r.digest))
    return tuple(ordered[:cap])


def batch_digest_of(batch: Sequence[Request]) -> bytes:
    return digest(*[r.digest for r in batch], domain=b"batch")


@dataclass(slots=True)
class StepResult:
    sends: List[Tuple[int, object]] = field(default_factory=list)
    timers: List[Tuple[int, TimerTick]] = field(default_factory=list)


class _ReplicaBase:
    """State shared by both protocol variants."""

    def __init__(
        self,
        node_id: int,
        registry,
        *,
        batch_window_us: int,
        view_timeout_us: int,
        block_tx_cap: int,
    ) -> None:
        self.node_id = node_id
        self.registry = registry
        self.batch_window_us = batch_window_us
        self.view_timeout_us = view_timeout_us
        self.block_tx_cap = block_tx_cap

        self.height = 1  # next block height to commit; genesis occupies 0
        self.view = 0
        self.ledger: Dict[int, Block] = {0: GENESIS_BLOCK}
        self.request_buffer: Dict[bytes, Request] = {}
        self.seen_requests: Set[bytes] = set()
        # One armed watchdog/batch timer per (kind, height, view); without
        # this, every buffered request would arm its own timer and each
        # expiry would fire a redundant view-change volley.
        self.timer_armed: Set[Tuple[str, int, int]] = set()
        # Observations drained by the orchestrator at round boundaries:
        # ("incompletion", node, height) / ("quorum_conflict", ...) / ...
        self.observations: List[Tuple] = []

    def _arm_once(self, result: "StepResult", kind: str, delay_us: int) -> None:
        key = (kind, self.height, self.view)
        if key in self.timer_armed:
            return
        self.timer_armed.add(key)
        result.timers.append((delay_us, TimerTick(kind, self.height, self.view)))

    def _prune_timer_keys(self) -> None:
        self.timer_armed = {key for key in self.timer_armed if key[1] >= self.height}

    # -- request intake shared by both protocols --

    def _accept_request(self, request: Request) -> bool:
        if request.digest in self.seen_requests:
            return False
        if request.digest != tx_digest(request.payload):
            logger.debug("node %d: request with wrong digest dropped", self.node_id)
            return False
        if not signature_ok(request, self.registry, request.client_id):
            logger.debug("node %d: request with bad signature dropped", self.node_id)
            return False
        self.seen_requests.add(request.digest)
        self.request_buffer[request.digest] = request
        return True

    def _validate_proposal_content(self, batch: Tuple[Request, ...], digest_field: bytes) -> bool:
        if not batch or len(batch) > self.block_tx_cap:
            return False
        seen: Set[bytes] = set()
        for request in batch:
            if request.digest in seen:
                return False
            seen.add(request.digest)
            if request.digest != tx_digest(request.payload):
                return False
            if not signature_ok(request, self.registry, request.client_id):
                return False
        return digest_field == batch_digest_of(batch)

    def _commit_block(self, batch: Tuple[Request, ...], view: int, committers: Tuple[int, ...]) -> Block:
        digests = tuple(r.digest for r in batch)
        previous = self.ledger[self.height - 1].block_digest
        block = Block(
            height=self.height,
            view=view,
            previous_hash=previous,
            batch_digests=digests,
            tx_count=len(batch),
            block_digest=block_digest_of(previous, self.height, digests),
            committers=committers,
        )
        self.ledger[self.height] = block
        for d in digests:
            self.request_buffer.pop(d, None)
        return block

    def _replies_for(self, batch: Tuple[Request, ...], now: int, committee_size: int) -> List[Tuple[int, object]]:
        sends: List[Tuple[int, object]] = []
        for client_id in sorted({r.client_id for r in batch}):
            reply = signed(
                Reply(
                    client_id=client_id,
                    timestamp=now,
                    digest=batch_digest_of(batch),
                    committee_size=committee_size,
                    valid=True,
                    sender=self.node_id,
                ),
                self.registry,
                self.node_id,
            )
            sends.append((client_id, reply))
        return sends

    def adopt_block(self, block: Block) -> None:
        """Fill a ledger hole from a round-end announce (never overwrites)."""
        if block.height in self.ledger:
            return
        if block.height != self.height:
            return
        self.ledger[block.height] = block
        for d in block.batch_digests:
            self.request_buffer.pop(d, None)
        self.height += 1


class EbrcReplica(_ReplicaBase):
    """Two-phase committee replica with rotating master and membership flows.

    Per round: the master batches buffered requests after the batch window and
    broadcasts a Prepare; every consensus node validates and broadcasts a
    Commit; 2f+1 matching valid commits commit the block, each node replies to
    the clients, and (height, view) both advance, rotating the master.
    """

    def __init__(self, node_id, registry, *, batch_window_us, view_timeout_us, block_tx_cap) -> None:
        super().__init__(
            node_id,
            registry,
            batch_window_us=batch_window_us,
            view_timeout_us=view_timeout_us,
            block_tx_cap=block_tx_cap,
        )
        self.committee: Tuple[int, ...] = ()
        self.candidates: Tuple[int, ...] = ()
        self.f = 0
        self.epoch = 0
        self.table_reputation: Dict[int, float] = {}
        self.proposal: Optional[Prepare] = None
        self.commit_tallies: Dict[int, Dict[bytes, Set[int]]] = {}
        self.commit_sent_views: Set[int] = set()
        self.proposed_views: Set[int] = set()
        self.viewchange_tallies: Dict[Tuple[int, int], Set[int]] = {}
        self.viewchanges_sent: Set[Tuple[int, int]] = set()
        self.view_change_count = 0
        self.forwarded: Set[bytes] = set()
        self.membership = djep.MembershipState()

    # -- role helpers --

    @property
    def is_member(self) -> bool:
        return self.node_id in self.committee

    def master_id(self) -> int:
        return self.committee[select_master(self.height, self.view, self.f)]

    @property
    def is_master(self) -> bool:
        return self.is_member and self.master_id() == self.node_id

    def set_committee(
        self,
        committee: Sequence[int],
        candidates: Sequence[int],
        f: int,
        *,
        epoch: int,
        table_reputation: Dict[int, float],
        now: int,
    ) -> StepResult:
        """Install a new epoch's committee; views restart at 0."""
        self.committee = tuple(committee)
        self.candidates = tuple(candidates)
        self.f = f
        self.epoch = epoch
        self.table_reputation = dict(table_reputation)
        self.view = 0
        self.proposal = None
        self.commit_tallies.clear()
        self.commit_sent_views.clear()
        self.proposed_views.clear()
        self.viewchange_tallies.clear()
        self.viewchanges_sent.clear()
        self.timer_armed.clear()
        self.membership = djep.MembershipState()
        return self._arm_for_pending(now)

    def apply_membership(
        self,
        committee: Sequence[int],
        candidates: Sequence[int],
        f: int,
        *,
        view_hint: Optional[int] = None,
    ) -> None:
        """Mid-epoch committee update (exit/join/replacement), same view chain.

        A node entering the committee has never tracked the members' view
        chain; ``view_hint`` hands it the current view so its commits count.
        """
        joining = self.node_id in committee and not self.is_member
        self.committee = tuple(committee)
        self.candidates = tuple(candidates)
        self.f = f
        if joining and view_hint is not None:
            self.view = view_hint

    def _arm_for_pending(self, now: int) -> StepResult:
        result = StepResult()
        if not self.is_member or not self.request_buffer:
            return result
        if self.is_master:
            self._arm_once(result, "batch", self.batch_window_us)
        else:
            self._arm_once(result, "round", self.view_timeout_us)
        return result

    # -- main event dispatch --

    def step(self, now: int, event) -> StepResult:
        if isinstance(event, TimerTick):
            return self._on_timer(now, event)
        if isinstance(event, Request):
            return self._on_request(now, event)
        if isinstance(event, ForwardedRequest):
            if signature_ok(event, self.registry, event.forwarder):
                return self._on_request(now, event.request)
            return StepResult()
        if isinstance(event, Prepare):
            return self._on_prepare(now, event)
        if isinstance(event, Commit):
            return self._on_commit(now, event)
        if isinstance(event, ViewChange):
            return self._on_viewchange(now, event)
        if isinstance(event, BlockAnnounce):
            return self._on_announce(event)
        if isinstance(event, ExitRequest):
            return self._on_exit_request(now, event)
        if isinstance(event, ExitCommit):
            return self._on_exit_commit(event)
        if isinstance(event, ChangeNotice):
            return self._on_change(now, event)
        if isinstance(event, JoinRequest):
            return self._on_join_request(now, event)
        if isinstance(event, JoinCommit):
            return self._on_join_commit(event)
        if isinstance(event, (Reply, Report)):
            return StepResult()  # replies/report tallying happen off-replica
        logger.debug("node %d: unhandled event %r", self.node_id, type(event).__name__)
        return StepResult()

    # -- request / batch --

    def _on_request(self, now: int, request: Request) -> StepResult:
        result = StepResult()
        fresh = self._accept_request(request)
        if not self.is_member:
            # Outside the committee: forward once toward the current master.
            if fresh and self.committee and request.digest not in self.forwarded:
                self.forwarded.add(request.digest)
                fwd = signed(
                    ForwardedRequest(request=request, forwarder=self.node_id),
                    self.registry,
                    self.node_id,
                )
                result.sends.append((self.master_id(), fwd))
            return result
        if not fresh:
            return result
        if self.is_master:
            if self.view not in self.proposed_views:
                self._arm_once(result, "batch", self.batch_window_us)
        else:
            self._arm_once(result, "round", self.view_timeout_us)
        return result

    def _on_timer(self, now: int, tick: TimerTick) -> StepResult:
        if tick.height != self.height or tick.view != self.view:
            return StepResult()  # stale timer
        if tick.kind == "batch":
            return self._propose(now)
        if tick.kind == "round":
            if self.height in self.ledger:
                return StepResult()
            return self._start_view_change(now, self.view + 1)
        return StepResult()

    def _propose(self, now: int) -> StepResult:
        result = StepResult()
        if not self.is_master or self.view in self.proposed_views:
            return result
        batch = canonical_batch(self.request_buffer, self.block_tx_cap)
        if not batch:
            return result
        self.proposed_views.add(self.view)
        prepare = signed(
            Prepare(
                height=self.height,
                view=self.view,
                timestamp=now,
                batch=batch,
                digest=batch_digest_of(batch),
                sender=self.node_id,
            ),
            self.registry,
            self.node_id,
        )
        self.proposal = prepare
        for peer in self.committee:
            if peer != self.node_id:
                result.sends.append((peer, prepare))
        result.sends.extend(self._broadcast_commit(now, prepare.digest))
        # The master also expects the round to finish; arm its own watchdog.
        self._arm_once(result, "round", self.view_timeout_us)
        self._try_commit(now, result)
        return result

    # -- prepare / commit --

    def _on_prepare(self, now: int, prepare: Prepare) -> StepResult:
        result = StepResult()
        if not self.is_member:
            return result
        if prepare.height != self.height or prepare.view != self.view:
            return result  # stale or future view: dropped silently
        if prepare.sender != self.master_id():
            return result
        if not signature_ok(prepare, self.registry, prepare.sender):
            logger.debug("node %d: prepare signature failure", self.node_id)
            return result
        if not self._validate_proposal_content(prepare.batch, prepare.digest):
            # Provably bad proposal: depose and report the master.
            report = signed(
                Report(
                    accused=prepare.sender,
                    evidence_kind="invalid-proposal",
                    round_index=self.height,
                    reporter=self.node_id,
                ),
                self.registry,
                self.node_id,
            )
            for peer in self.committee:
                if peer != self.node_id:
                    result.sends.append((peer, report))
            vc = self._start_view_change(now, self.view + 1)
            result.sends.extend(vc.sends)
            result.timers.extend(vc.timers)
            return result
        self.proposal = prepare
        result.sends.extend(self._broadcast_commit(now, prepare.digest))
        self._try_commit(now, result)
        return result

    def _broadcast_commit(self, now: int, digest_value: bytes) -> List[Tuple[int, object]]:
        if self.view in self.commit_sent_views:
            return []
        self.commit_sent_views.add(self.view)
        commit = signed(
            Commit(
                view=self.view,
                timestamp=now,
                digest=digest_value,
                sequence=self.height,
                valid=True,
                sender=self.node_id,
            ),
            self.registry,
            self.node_id,
        )
        tally = self.commit_tallies.setdefault(self.view, {})
        tally.setdefault(digest_value, set()).add(self.node_id)
        return [(peer, commit) for peer in self.committee if peer != self.node_id]

    def _on_commit(self, now: int, commit: Commit) -> StepResult:
        result = StepResult()
        if not self.is_member or commit.sequence != self.height:
            return result
        if not commit.valid:
            return result
        if commit.sender not in self.committee:
            return result
        if not signature_ok(commit, self.registry, commit.sender):
            return result
        tally = self.commit_tallies.setdefault(commit.view, {})
        tally.setdefault(commit.digest, set()).add(commit.sender)
        self._try_commit(now, result)
        return result

    def _try_commit(self, now: int, result: StepResult) -> None:
        tally = self.commit_tallies.get(self.view)
        if not tally:
            return
        try:
            winner = check_quorum(tally, self.f)
        except QuorumConflict as exc:
            self.observations.append(("quorum_conflict", self.node_id, self.height, str(exc)))
            return
        if winner is None:
            return
        if self.proposal is None or self.proposal.digest != winner:
            return  # quorum observed without the matching proposal payload
        committers = tuple(sorted(tally[winner]))
        batch = self.proposal.batch
        view = self.view
        self._commit_block(batch, view, committers)
        result.sends.extend(self._replies_for(batch, now, len(self.committee)))
        self._advance_round(now, result)

    def _advance_round(self, now: int, result: StepResult) -> None:
        self.height += 1
        self.view += 1
        self.proposal = None
        self.commit_tallies.clear()
        self.commit_sent_views.clear()
        self.proposed_views.clear()
        self.viewchange_tallies = {
            key: senders for key, senders in self.viewchange_tallies.items() if key[0] >= self.height
        }
        self._prune_timer_keys()
        armed = self._arm_for_pending(now)
        result.sends.extend(armed.sends)
        result.timers.extend(armed.timers)

    # -- view change --

    def _start_view_change(self, now: int, proposed_view: int) -> StepResult:
        # A repeated call for the same key re-broadcasts: the only caller
        # that can repeat is the watchdog chain (one tick per timeout
        # window), so under message loss this is the retry path.
        result = StepResult()
        key = (self.height, proposed_view)
        self.viewchanges_sent.add(key)
        vc = signed(
            ViewChange(
                height=self.height,
                proposed_view=proposed_view,
                reporter=self.node_id,
            ),
            self.registry,
            self.node_id,
        )
        self.viewchange_tallies.setdefault(key, set()).add(self.node_id)
        for peer in self.committee:
            if peer != self.node_id:
                result.sends.append((peer, vc))
        result.timers.append((self.view_timeout_us, TimerTick("round", self.height, self.view)))
        self._maybe_adopt_view(now, proposed_view, result)
        return result

    def _on_viewchange(self, now: int, vc: ViewChange) -> StepResult:
        result = StepResult()
        if not self.is_member:
            return result
        if vc.height != self.height or vc.proposed_view <= self.view:
            return result
        if vc.reporter not in self.committee:
            return result
        if not signature_ok(vc, self.registry, vc.reporter):
            return result
        key = (vc.height, vc.proposed_view)
        self.viewchange_tallies.setdefault(key, set()).add(vc.reporter)
        # Join a view change once f+1 peers vouch for it, even before our own
        # timer fires; prevents straggler deadlock.
        if (
            len(self.viewchange_tallies[key]) >= self.f + 1
            and key not in self.viewchanges_sent
        ):
            join = self._start_view_change(now, vc.proposed_view)
            result.sends.extend(join.sends)
            result.timers.extend(join.timers)
        self._maybe_adopt_view(now, vc.proposed_view, result)
        return result

    def _maybe_adopt_view(self, now: int, proposed_view: int, result: StepResult) -> None:
        key = (self.height, proposed_view)
        senders = self.viewchange_tallies.get(key, set())
        if len(senders) < 2 * self.f + 1 or proposed_view <= self.view:
            return
        ousted = self.master_id()
        self.observations.append(("incompletion", ousted, self.height))
        self.view_change_count += 1
        self.view = proposed_view
        self.proposal = None
        # The pending request batch is retained in the buffer; the new master
        # re-proposes it from there.
        if self.is_master and self.request_buffer:
            self._arm_once(result, "batch", self.batch_window_us)
        else:
            self._arm_once(result, "round", self.view_timeout_us)

    # -- round-end announce --

    def _on_announce(self, event: BlockAnnounce) -> StepResult:
        if not signature_ok(event, self.registry, event.sender):
            return StepResult()
        if event.height != self.height:
            return StepResult()
        previous = self.ledger[self.height - 1].block_digest
        expected = block_digest_of(previous, event.height, event.batch_digests)
        if expected != event.block_digest:
            return StepResult()
        block = Block(
            height=event.height,
            view=self.view,
            previous_hash=previous,
            batch_digests=tuple(event.batch_digests),
            tx_count=event.tx_count,
            block_digest=event.block_digest,
            committers=(),
        )
        self.ledger[block.height] = block
        for d in block.batch_digests:
            self.request_buffer.pop(d, None)
        self.height += 1
        if self.is_member:
            self.view += 1
            self.proposal = None
            self.commit_tallies.clear()
            self.commit_sent_views.clear()
            self.proposed_views.clear()
        return StepResult()

    # -- membership flows --

    def _on_exit_request(self, now: int, request: ExitRequest) -> StepResult:
        result = StepResult()
        if not self.is_master:
            return result
        if request.node_id not in self.committee:
            return result
        if not signature_ok(request, self.registry, request.node_id):
            logger.debug("node %d: forged exit request rejected", self.node_id)
            return result
        decision = djep.process_exit(
            committee=self.committee,
            f=self.f,
            candidates=self.candidates,
            reputation=self.table_reputation,
            leaver=request.node_id,
        )
        if decision.stalled:
            self.observations.append(("membership_stalled", request.node_id, self.height))
            return result
        self.membership.pending_exits[request.node_id] = request.effective_height
        self.membership.exit_signatures[request.node_id] = request.signature
        if decision.promote is None:
            result.sends.extend(self._finalize_exit(request.node_id, request.effective_height))
        else:
            # Below the committee floor: promotion runs first, exit finalizes
            # once the candidate is in.
            self.membership.joins_blocking_exit[decision.promote] = request.node_id
            result.sends.extend(self._invite(decision.promote, request.effective_height))
        return result

    def _invite(self, candidate: int, effective_height: int) -> List[Tuple[int, object]]:
        notice = signed(
            ChangeNotice(
                candidate_id=candidate,
                effective_height=effective_height,
                master_id=self.node_id,
            ),
            self.registry,
            self.node_id,
        )
        return [(candidate, notice)]

    def _finalize_exit(self, leaver: int, effective_height: int) -> List[Tuple[int, object]]:
        member_sig = self.membership.exit_signatures.get(leaver, b"")
        commit = signed(
            ExitCommit(
                node_id=leaver,
                effective_height=effective_height,
                member_signature=member_sig,
                master_id=self.node_id,
            ),
            self.registry,
            self.node_id,
        )
        return [(peer, commit) for peer in self.committee if peer != self.node_id]

    def _on_exit_commit(self, event: ExitCommit) -> StepResult:
        if not self.is_member:
            return StepResult()
        if not signature_ok(event, self.registry, event.master_id):
            return StepResult()
        self.membership.pending_exits[event.node_id] = event.effective_height
        return StepResult()

    def _on_change(self, now: int, event: ChangeNotice) -> StepResult:
        result = StepResult()
        if event.candidate_id != self.node_id:
            return result
        if not signature_ok(event, self.registry, event.master_id):
            return result
        claim = self.table_reputation.get(self.node_id, 0.0)
        join = signed(
            JoinRequest(
                node_id=self.node_id,
                reputation=claim,
                effective_height=event.effective_height,
            ),
            self.registry,
            self.node_id,
        )
        for peer in self.committee:
            result.sends.append((peer, join))
        return result

    def _on_join_request(self, now: int, event: JoinRequest) -> StepResult:
        result = StepResult()
        if not self.is_member:
            return result
        if not signature_ok(event, self.registry, event.node_id):
            return result
        expected = self.table_reputation.get(event.node_id)
        if event.node_id not in self.candidates or expected is None or expected != event.reputation:
            report = signed(
                Report(
                    accused=event.node_id,
                    evidence_kind="reputation-mismatch",
                    round_index=self.height,
                    reporter=self.node_id,
                ),
                self.registry,
                self.node_id,
            )
            for peer in self.committee:
                if peer != self.node_id:
                    result.sends.append((peer, report))
            return result
        self.membership.pending_joins[event.node_id] = event.effective_height
        confirm = signed(
            JoinCommit(
                candidate_id=event.node_id,
                effective_height=event.effective_height,
                sender=self.node_id,
            ),
            self.registry,
            self.node_id,
        )
        result.sends.append((event.node_id, confirm))
        if self.is_master and event.node_id in self.membership.joins_blocking_exit:
            # The join that was gating an exit is now in flight; release the
            # held ExitCommit so both transitions land on the same boundary.
            leaver = self.membership.joins_blocking_exit.pop(event.node_id)
            effective = self.membership.pending_exits.get(leaver, event.effective_height)
            result.sends.extend(self._finalize_exit(leaver, effective))
        return result

    def _on_join_commit(self, event: JoinCommit) -> StepResult:
        if event.candidate_id != self.node_id:
            return StepResult()
        if not signature_ok(event, self.registry, event.sender):
            return StepResult()
        self.membership.join_confirms.setdefault(self.node_id, set()).add(event.sender)
        confirms = self.membership.join_confirms[self.node_id]
        if len(confirms) >= 2 * self.f + 1:
            self.membership.pending_joins[self.node_id] = event.effective_height
        return StepResult()


class PbftReplica(_ReplicaBase):
    """Classic three-phase baseline with a stable primary (p = v mod n).

    Pre-prepare from the primary, prepare echoes from the backups, commit
    votes from everyone; prepared = pre-prepare + 2f matching prepares,
    committed = 2f+1 matching commits. The primary only rotates on view
    change. No checkpointing, no NEW-VIEW certificate: the same 2f+1
    ViewChange adoption rule as the committee protocol stands in for it.
    """

    def __init__(self, node_id, registry, *, batch_window_us, view_timeout_us, block_tx_cap, group: Sequence[int]) -> None:
        super().__init__(
            node_id,
            registry,
            batch_window_us=batch_window_us,
            view_timeout_us=view_timeout_us,
            block_tx_cap=block_tx_cap,
        )
        self.group = tuple(group)
        self.f = (len(self.group) - 1) // 3
        self.proposal: Optional[PrePrepare] = None
        self.prepare_tallies: Dict[int, Dict[bytes, Set[int]]] = {}
        self.commit_tallies: Dict[int, Dict[bytes, Set[int]]] = {}
        self.prepare_sent_views: Set[int] = set()
        self.commit_sent_views: Set[int] = set()
        self.proposed_views: Set[int] = set()
        self.viewchange_tallies: Dict[Tuple[int, int], Set[int]] = {}
        self.viewchanges_sent: Set[Tuple[int, int]] = set()
        self.view_change_count = 0

    def primary_id(self) -> int:
        return self.group[self.view % len(self.group)]

    @property
    def is_primary(self) -> bool:
        return self.primary_id() == self.node_id

    def step(self, now: int, event) -> StepResult:
        if isinstance(event, TimerTick):
            return self._on_timer(now, event)
        if isinstance(event, Request):
            return self._on_request(now, event)
        if isinstance(event, PrePrepare):
            return self._on_preprepare(now, event)
        if isinstance(event, PbftPrepare):
            return self._on_prepare(now, event)
        if isinstance(event, PbftCommit):
            return self._on_commit(now, event)
        if isinstance(event, ViewChange):
            return self._on_viewchange(now, event)
        if isinstance(event, BlockAnnounce):
            return self._on_announce(event)
        if isinstance(event, (Reply, Report)):
            return StepResult()
        return StepResult()

    def _on_request(self, now: int, request: Request) -> StepResult:
        result = StepResult()
        if not self._accept_request(request):
            return result
        if self.is_primary:
            if self.view not in self.proposed_views:
                self._arm_once(result, "batch", self.batch_window_us)
        else:
            self._arm_once(result, "round", self.view_timeout_us)
        return result

    def _on_timer(self, now: int, tick: TimerTick) -> StepResult:
        if tick.height != self.height or tick.view != self.view:
            return StepResult()
        if tick.kind == "batch":
            return self._propose(now)
        if tick.kind == "round":
            if self.height in self.ledger:
                return StepResult()
            return self._start_view_change(now, self.view + 1)
        return StepResult()

    def _propose(self, now: int) -> StepResult:
        result = StepResult()
        if not self.is_primary or self.view in self.proposed_views:
            return result
        batch = canonical_batch(self.request_buffer, self.block_tx_cap)
        if not batch:
            return result
        self.proposed_views.add(self.view)
        preprepare = signed(
            PrePrepare(
                height=self.height,
                view=self.view,
                timestamp=now,
                batch=batch,
                digest=batch_digest_of(batch),
                sender=self.node_id,
            ),
            self.registry,
            self.node_id,
        )
        self.proposal = preprepare
        for peer in self.group:
            if peer != self.node_id:
                result.sends.append((peer, preprepare))
        self._arm_once(result, "round", self.view_timeout_us)
        self._maybe_send_commit(now, result)
        return result

    def _on_preprepare(self, now: int, msg: PrePrepare) -> StepResult:
        result = StepResult()
        if msg.height != self.height or msg.view != self.view:
            return result
        if msg.sender != self.primary_id() or self.is_primary:
            return result
        if not signature_ok(msg, self.registry, msg.sender):
            return result
        if not self._validate_proposal_content(msg.batch, msg.digest):
            report_vc = self._start_view_change(now, self.view + 1)
            result.sends.extend(report_vc.sends)
            result.timers.extend(report_vc.timers)
            return result
        self.proposal = msg
        if self.view not in self.prepare_sent_views:
            self.prepare_sent_views.add(self.view)
            prepare = signed(
                PbftPrepare(height=self.height, view=self.view, digest=msg.digest, sender=self.node_id),
                self.registry,
                self.node_id,
            )
            self.prepare_tallies.setdefault(self.view, {}).setdefault(msg.digest, set()).add(self.node_id)
            for peer in self.group:
                if peer != self.node_id:
                    result.sends.append((peer, prepare))
        self._maybe_send_commit(now, result)
        return result

    def _on_prepare(self, now: int, msg: PbftPrepare) -> StepResult:
        result = StepResult()
        if msg.height != self.height or msg.sender not in self.group:
            return result
        if not signature_ok(msg, self.registry, msg.sender):
            return result
        self.prepare_tallies.setdefault(msg.view, {}).setdefault(msg.digest, set()).add(msg.sender)
        self._maybe_send_commit(now, result)
        return result

    def _prepared(self) -> bool:
        if self.proposal is None or self.proposal.view != self.view:
            return False
        tally = self.prepare_tallies.get(self.view, {})
        senders = tally.get(self.proposal.digest, set())
        # The primary never sends a prepare; it waits for 2f backup echoes.
        # Backups count their own echo, so the same threshold works for both.
        return len(senders) >= 2 * self.f

    def _maybe_send_commit(self, now: int, result: StepResult) -> None:
        if self.view in self.commit_sent_views or not self._prepared():
            return
        self.commit_sent_views.add(self.view)
        commit = signed(
            PbftCommit(
                height=self.height,
                view=self.view,
                digest=self.proposal.digest,
                sender=self.node_id,
            ),
            self.registry,
            self.node_id,
        )
        self.commit_tallies.setdefault(self.view, {}).setdefault(self.proposal.digest, set()).add(self.node_id)
        for peer in self.group:
            if peer != self.node_id:
                result.sends.append((peer, commit))
        self._maybe_execute(now, result)

    def _on_commit(self, now: int, msg: PbftCommit) -> StepResult:
        result = StepResult()
        if msg.height != self.height or msg.sender not in self.group:
            return result
        if not signature_ok(msg, self.registry, msg.sender):
            return result
        self.commit_tallies.setdefault(msg.view, {}).setdefault(msg.digest, set()).add(msg.sender)
        self._maybe_execute(now, result)
        return result

    def _maybe_execute(self, now: int, result: StepResult) -> None:
        tally = self.commit_tallies.get(self.view)
        if not tally:
            return
        try:
            winner = check_quorum(tally, self.f)
        except QuorumConflict as exc:
            self.observations.append(("quorum_conflict", self.node_id, self.height, str(exc)))
            return
        if winner is None or self.proposal is None or self.proposal.digest != winner:
            return
        committers = tuple(sorted(tally[winner]))
        batch = self.proposal.batch
        self._commit_block(batch, self.view, committers)
        result.sends.extend(self._replies_for(batch, now, len(self.group)))
        self.height += 1
        self.proposal = None
        self.prepare_tallies.clear()
        self.commit_tallies.clear()
        self.prepare_sent_views.clear()
        self.commit_sent_views.clear()
        self.proposed_views.clear()
        self.viewchange_tallies = {
            key: senders for key, senders in self.viewchange_tallies.items() if key[0] >= self.height
        }
        self._prune_timer_keys()
        if self.request_buffer:
            if self.is_primary:
                self._arm_once(result, "batch", self.batch_window_us)
            else:
                self._arm_once(result, "round", self.view_timeout_us)

    def _start_view_change(self, now: int, proposed_view: int) -> StepResult:
        result = StepResult()
        key = (self.height, proposed_view)
        self.viewchanges_sent.add(key)
        vc = signed(
            ViewChange(height=self.height, proposed_view=proposed_view, reporter=self.node_id),
            self.registry,
            self.node_id,
        )
        self.viewchange_tallies.setdefault(key, set()).add(self.node_id)
        for peer in self.group:
            if peer != self.node_id:
                result.sends.append((peer, vc))
        result.timers.append((self.view_timeout_us, TimerTick("round", self.height, self.view)))
        self._maybe_adopt_view(now, proposed_view, result)
        return result

    def _on_viewchange(self, now: int, vc: ViewChange) -> StepResult:
        result = StepResult()
        if vc.height != self.height or vc.proposed_view <= self.view:
            return result
        if vc.reporter not in self.group:
            return result
        if not signature_ok(vc, self.registry, vc.reporter):
            return result
        key = (vc.height, vc.proposed_view)
        self.viewchange_tallies.setdefault(key, set()).add(vc.reporter)
        if len(self.viewchange_tallies[key]) >= self.f + 1 and key not in self.viewchanges_sent:
            join = self._start_view_change(now, vc.proposed_view)
            result.sends.extend(join.sends)
            result.timers.extend(join.timers)
        self._maybe_adopt_view(now, vc.proposed_view, result)
        return result

    def _maybe_adopt_view(self, now: int, proposed_view: int, result: StepResult) -> None:
        key = (self.height, proposed_view)
        senders = self.viewchange_tallies.get(key, set())
        if len(senders) < 2 * self.f + 1 or proposed_view <= self.view:
            return
        self.observations.append(("incompletion", self.primary_id(), self.height))
        self.view_change_count += 1
        self.view = proposed_view
        self.proposal = None
        if self.is_primary and self.request_buffer:
            self._arm_once(result, "batch", self.batch_window_us)
        else:
            self._arm_once(result, "round", self.view_timeout_us)

    def _on_announce(self, event: BlockAnnounce) -> StepResult:
        if not signature_ok(event, self.registry, event.sender):
            return StepResult()
        if event.height != self.height:
            return StepResult()
        previous = self.ledger[self.height - 1].block_digest
        if block_digest_of(previous, event.height, event.batch_digests) != event.block_digest:
            return StepResult()
        self.ledger[event.height] = Block(
            height=event.height,
            view=self.view,
            previous_hash=previous,
            batch_digests=tuple(event.batch_digests),
            tx_count=event.tx_count,
            block_digest=event.block_digest,
            committers=(),
        )
        for d in event.batch_digests:
            self.request_buffer.pop(d, None)
        self.height += 1
        self.proposal = None
        self.prepare_tallies.clear()
        self.commit_tallies.clear()
        self.prepare_sent_views.clear()
        self.commit_sent_views.clear()
        self.proposed_views.clear()
        return StepResult()

"""Wire messages exchanged through the simulated network.

Every message is a frozen dataclass with a ``TAG`` used for trace lines and
per-tag counting, and a ``signed_payload()`` whose digest the sender signs.
Byzantine transforms re-sign mutated copies with the sender's own key, so
signature checks pass and misbehavior must be caught by content checks or
quorum math, mirroring real deployments.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import ClassVar, Optional, Tuple

from .crypto import pack

# Tags that the per-round consensus message-count law covers. Requests,
# forwards, replies to clients, elections, membership, and block announces are
# traced and counted under their own tags.
CONSENSUS_TAGS = ("preprepare", "prepare", "commit", "reply")
MEMBERSHIP_TAGS = ("erequest", "exit_commit", "change", "urequest", "join_commit")


@dataclass(frozen=True, slots=True)
class Request:
    """Client transaction submission, broadcast to the whole network."""

    TAG: ClassVar[str] = "request"
    timestamp: int
    payload: bytes
    digest: bytes
    client_id: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(self.TAG, self.timestamp, self.payload, self.digest, self.client_id)


@dataclass(frozen=True, slots=True)
class ForwardedRequest:
    """Request relayed to the master by a node outside the committee."""

    TAG: ClassVar[str] = "request_fwd"
    request: Request
    forwarder: int
    signature: bytes = b""

    @property
    def digest(self) -> bytes:
        return self.request.digest

    def signed_payload(self) -> bytes:
        return pack(self.TAG, self.request.signed_payload(), self.forwarder)


@dataclass(frozen=True, slots=True)
class Prepare:
    """Master proposal carrying the transaction batch (two-phase protocol)."""

    TAG: ClassVar[str] = "prepare"
    height: int
    view: int
    timestamp: int
    batch: Tuple[Request, ...]
    digest: bytes
    sender: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(self.TAG, self.height, self.view, self.timestamp, self.digest, self.sender)


@dataclass(frozen=True, slots=True)
class Commit:
    """Validation vote; a block commits on 2f+1 matching valid commits."""

    TAG: ClassVar[str] = "commit"
    view: int
    timestamp: int
    digest: bytes
    sequence: int  # equals the block height
    valid: bool
    sender: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(
            self.TAG, self.view, self.timestamp, self.digest,
            self.sequence, self.valid, self.sender,
        )


@dataclass(frozen=True, slots=True)
class Reply:
    """Per-replica confirmation to the client (f+1 matching confirms a tx)."""

    TAG: ClassVar[str] = "reply"
    client_id: int
    timestamp: int
    digest: bytes
    committee_size: int
    valid: bool
    sender: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(
            self.TAG, self.client_id, self.timestamp, self.digest,
            self.committee_size, self.valid, self.sender,
        )


@dataclass(frozen=True, slots=True)
class ViewChange:
    """Vote to depose the current master; adopted at 2f+1 distinct reporters.

    Carries the height because view numbers restart every epoch, so the
    proposed view alone cannot be judged stale.
    """

    TAG: ClassVar[str] = "viewchange"
    height: int
    proposed_view: int
    reporter: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(self.TAG, self.height, self.proposed_view, self.reporter)


@dataclass(frozen=True, slots=True)
class Report:
    """Accusation with evidence kind; confirmed at f+1 distinct reporters."""

    TAG: ClassVar[str] = "report"
    accused: int
    evidence_kind: str
    round_index: int
    reporter: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(self.TAG, self.accused, self.evidence_kind, self.round_index, self.reporter)


@dataclass(frozen=True, slots=True)
class BlockAnnounce:
    """Round-end dissemination of a committed block to the whole network."""

    TAG: ClassVar[str] = "block_announce"
    height: int
    block_digest: bytes
    batch_digests: Tuple[bytes, ...]
    tx_count: int
    sender: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(
            self.TAG, self.height, self.block_digest,
            tuple(self.batch_digests), self.tx_count, self.sender,
        )


@dataclass(frozen=True, slots=True)
class VrfConnect:
    """Selectee's sortition announcement (public key + proof) for an epoch."""

    TAG: ClassVar[str] = "vrf_connect"
    epoch: int
    node_id: int
    public_key: bytes
    proof: bytes
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(self.TAG, self.epoch, self.node_id, self.public_key, self.proof)


# --- Classic three-phase baseline ---

@dataclass(frozen=True, slots=True)
class PrePrepare:
    """Primary's proposal in the three-phase baseline."""

    TAG: ClassVar[str] = "preprepare"
    height: int
    view: int
    timestamp: int
    batch: Tuple[Request, ...]
    digest: bytes
    sender: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(self.TAG, self.height, self.view, self.timestamp, self.digest, self.sender)


@dataclass(frozen=True, slots=True)
class PbftPrepare:
    """Backup's echo of the pre-prepare (digest only)."""

    TAG: ClassVar[str] = "prepare"
    height: int
    view: int
    digest: bytes
    sender: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack("pbft-" + self.TAG, self.height, self.view, self.digest, self.sender)


@dataclass(frozen=True, slots=True)
class PbftCommit:
    """Commit vote in the three-phase baseline."""

    TAG: ClassVar[str] = "commit"
    height: int
    view: int
    digest: bytes
    sender: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack("pbft-" + self.TAG, self.height, self.view, self.digest, self.sender)


# --- Membership (dynamic join/exit) ---

@dataclass(frozen=True, slots=True)
class ExitRequest:
    """Member announces departure effective at ``effective_height``."""

    TAG: ClassVar[str] = "erequest"
    node_id: int
    effective_height: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(self.TAG, self.node_id, self.effective_height)


@dataclass(frozen=True, slots=True)
class ExitCommit:
    """Exit finalization co-signed by the leaver and the master."""

    TAG: ClassVar[str] = "exit_commit"
    node_id: int
    effective_height: int
    member_signature: bytes
    master_id: int
    signature: bytes = b""  # master's signature

    def signed_payload(self) -> bytes:
        return pack(
            self.TAG, self.node_id, self.effective_height,
            self.member_signature, self.master_id,
        )


@dataclass(frozen=True, slots=True)
class ChangeNotice:
    """Master invites the best candidate to join the consensus set."""

    TAG: ClassVar[str] = "change"
    candidate_id: int
    effective_height: int
    master_id: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(self.TAG, self.candidate_id, self.effective_height, self.master_id)


@dataclass(frozen=True, slots=True)
class JoinRequest:
    """Candidate's upgrade request carrying its claimed reputation."""

    TAG: ClassVar[str] = "urequest"
    node_id: int
    reputation: float
    effective_height: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(self.TAG, self.node_id, f"{self.reputation:.12e}", self.effective_height)


@dataclass(frozen=True, slots=True)
class JoinCommit:
    """Member's confirmation that the candidate may join."""

    TAG: ClassVar[str] = "join_commit"
    candidate_id: int
    effective_height: int
    sender: int
    signature: bytes = b""

    def signed_payload(self) -> bytes:
        return pack(self.TAG, self.candidate_id, self.effective_height, self.sender)


def signed(message, registry, signer_id: int):
    """Return a copy of ``message`` signed by ``signer_id``."""
    return replace(message, signature=registry.sign(signer_id, message.signed_payload()))


def signature_ok(message, registry, signer_id: int) -> bool:
    return registry.verify(signer_id, message.signed_payload(), message.signature)

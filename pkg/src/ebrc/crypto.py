"""Deterministic cryptographic stand-ins for simulation use.

Every primitive here is keyed BLAKE2b: cheap, reproducible, and verifiable
through a trusted in-simulation registry rather than real public-key math.
That is intentional -- runs must replay bit-for-bit, and the sortition
interface is pluggable so a production VRF could be dropped in behind the
same surface without touching the protocol logic.
"""

from __future__ import annotations

from dataclasses import dataclass
from hashlib import blake2b
from typing import Iterable, Optional, Protocol, Tuple

DIGEST_SIZE = 32
VRF_VALUE_BITS = 8 * DIGEST_SIZE
#: Size of the sortition output space; self-selection compares value/VRF_RANGE
#: against the configured threshold.
VRF_RANGE = 1 << VRF_VALUE_BITS

ZERO_HASH = b"\x00" * DIGEST_SIZE


def digest(*parts: bytes, domain: bytes = b"msg") -> bytes:
    """Length-prefixed, domain-separated BLAKE2b over ``parts``."""
    h = blake2b(digest_size=DIGEST_SIZE)
    h.update(len(domain).to_bytes(2, "big"))
    h.update(domain)
    for part in parts:
        h.update(len(part).to_bytes(4, "big"))
        h.update(part)
    return h.digest()


def digest_int(*parts: bytes, domain: bytes = b"int") -> int:
    """Digest reduced to an unsigned integer (used for seeding RNG streams)."""
    return int.from_bytes(digest(*parts, domain=domain), "big")


def pack(*parts) -> bytes:
    """Canonical byte encoding of mixed int/str/bytes/bool fields.

    Used to build signing payloads; unambiguous because every element is
    length-prefixed by the digest routine downstream.
    """
    out = []
    for part in parts:
        if isinstance(part, bool):
            out.append(b"\x01" if part else b"\x00")
        elif isinstance(part, int):
            out.append(part.to_bytes(16, "big", signed=True))
        elif isinstance(part, str):
            out.append(part.encode("utf-8"))
        elif isinstance(part, bytes):
            out.append(part)
        elif isinstance(part, (tuple, list)):
            out.append(pack(*part))
        elif part is None:
            out.append(b"\xff")
        else:
            raise TypeError(f"cannot pack {type(part).__name__}")
    return digest(*out, domain=b"pack")


@dataclass(frozen=True, slots=True)
class KeyPair:
    owner_id: int
    public_key: bytes
    secret_key: bytes


class KeyRegistry:
    """Key directory doubling as the trusted verification oracle.

    Real deployments verify signatures and sortition proofs with public-key
    math; the simulation instead resolves the secret key for a public key
    through this registry. Only verification helpers consult the secret side.
    """

    def __init__(self, seed: bytes) -> None:
        self._seed = seed
        self._by_owner: dict[int, KeyPair] = {}
        self._secret_for: dict[bytes, bytes] = {}

    def register(self, owner_id: int) -> KeyPair:
        existing = self._by_owner.get(owner_id)
        if existing is not None:
            return existing
        secret = digest(self._seed, owner_id.to_bytes(8, "big", signed=True), domain=b"sk")
        public = digest(secret, domain=b"pk")
        pair = KeyPair(owner_id, public, secret)
        self._by_owner[owner_id] = pair
        self._secret_for[public] = secret
        return pair

    def public_key(self, owner_id: int) -> bytes:
        return self._by_owner[owner_id].public_key

    def secret_key(self, owner_id: int) -> bytes:
        return self._by_owner[owner_id].secret_key

    def resolve_secret(self, public_key: bytes) -> Optional[bytes]:
        """Trusted-oracle lookup; returns None for unknown keys."""
        return self._secret_for.get(public_key)

    def sign(self, owner_id: int, payload: bytes) -> bytes:
        return digest(self.secret_key(owner_id), payload, domain=b"sig")

    def verify(self, owner_id: int, payload: bytes, signature: bytes) -> bool:
        pair = self._by_owner.get(owner_id)
        if pair is None or not isinstance(signature, bytes):
            return False
        expected = digest(pair.secret_key, payload, domain=b"sig")
        return signature == expected


@dataclass(frozen=True, slots=True)
class VrfOutput:
    """Sortition draw: a 256-bit value plus the proof that binds it to the key."""

    value: int
    proof: bytes


class Vrf(Protocol):
    """Pluggable verifiable-random-function surface used by elections."""

    def evaluate(self, secret_key: bytes, seed: bytes) -> VrfOutput: ...

    def verify(self, public_key: bytes, seed: bytes, proof: bytes) -> Tuple[bool, Optional[int]]: ...


class SimulatedVrf:
    """Keyed-digest VRF: value and proof are independent digests of (sk, seed).

    verify() recomputes both through the registry oracle; a forged or mangled
    proof fails closed with (False, None).
    """

    def __init__(self, registry: KeyRegistry) -> None:
        self._registry = registry

    @staticmethod
    def _value(secret_key: bytes, seed: bytes) -> int:
        return int.from_bytes(digest(secret_key, seed, domain=b"vrf-value"), "big")

    @staticmethod
    def _proof(secret_key: bytes, seed: bytes) -> bytes:
        return digest(secret_key, seed, domain=b"vrf-proof")

    def evaluate(self, secret_key: bytes, seed: bytes) -> VrfOutput:
        return VrfOutput(self._value(secret_key, seed), self._proof(secret_key, seed))

    def verify(self, public_key: bytes, seed: bytes, proof: bytes) -> Tuple[bool, Optional[int]]:
        secret = self._registry.resolve_secret(public_key)
        if secret is None or not isinstance(proof, bytes):
            return False, None
        if proof != self._proof(secret, seed):
            return False, None
        return True, self._value(secret, seed)


def derive_seed(previous_block_hash: bytes) -> bytes:
    """Epoch election seed derived from the latest agreed block hash."""
    if not isinstance(previous_block_hash, bytes) or len(previous_block_hash) != DIGEST_SIZE:
        raise ValueError("seed derivation requires a 32-byte block hash")
    return digest(previous_block_hash, domain=b"epoch-seed")


#: Seed used by the very first election, derived from the all-zero genesis hash.
GENESIS_SEED = derive_seed(ZERO_HASH)

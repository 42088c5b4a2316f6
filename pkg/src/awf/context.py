"""Authenticated per-session context.

A session's history is a hash chain over events; each sender has its own
strictly increasing sequence counter starting at 1, so replays are
rejected before the chain moves. Attestations are signed claims that a
named operation completed; the issuer's key bytes are pinned into the
chained event at record time, so later revocation never invalidates
historical proofs.
"""

from __future__ import annotations

import base64
import uuid
from dataclasses import dataclass, field
from typing import Any

from . import crypto
from .clock import Clock
from .errors import AwfError
from .registry import Registry, RegistryError


class ContextError(AwfError):
    code = "CONTEXT"


class SequenceViolationError(ContextError):
    code = "SEQUENCE_VIOLATION"


class BadAttestationSignatureError(ContextError):
    code = "BAD_SIGNATURE"


class UnknownIssuerError(ContextError):
    code = "UNKNOWN_ISSUER"


@dataclass(frozen=True)
class Attestation:
    """Signed claim that a named operation completed in a session."""

    name: str
    issuer: str
    session_id: str
    sequence: int
    result_digest: bytes
    issued_at: int
    signature: bytes

    def signing_payload(self) -> bytes:
        return crypto.canonical_encode(
            {
                "name": self.name,
                "issuer": self.issuer,
                "session_id": self.session_id,
                "sequence": self.sequence,
                "result_digest": self.result_digest.hex(),
                "issued_at": self.issued_at,
            }
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "issuer": self.issuer,
            "session_id": self.session_id,
            "sequence": self.sequence,
            "result_digest": self.result_digest.hex(),
            "issued_at": self.issued_at,
            "signature": base64.b64encode(self.signature).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "Attestation":
        return cls(
            name=obj["name"],
            issuer=obj["issuer"],
            session_id=obj["session_id"],
            sequence=obj["sequence"],
            result_digest=bytes.fromhex(obj["result_digest"]),
            issued_at=obj["issued_at"],
            signature=base64.b64decode(obj["signature"]),
        )


def make_attestation(
    name: str,
    issuer: str,
    keypair: crypto.KeyPair,
    session_id: str,
    sequence: int,
    result_digest: bytes,
    issued_at: int,
) -> Attestation:
    if not name:
        raise ContextError("attestation name must be non-empty")
    unsigned = Attestation(
        name=name,
        issuer=issuer,
        session_id=session_id,
        sequence=sequence,
        result_digest=result_digest,
        issued_at=issued_at,
        signature=b"",
    )
    return Attestation(
        name=name,
        issuer=issuer,
        session_id=session_id,
        sequence=sequence,
        result_digest=result_digest,
        issued_at=issued_at,
        signature=crypto.sign(keypair, unsigned.signing_payload()),
    )


@dataclass
class ContextEvent:
    sequence: int
    sender: str
    payload: dict[str, Any]
    head_after: bytes

    def chain_state(self) -> dict[str, Any]:
        return {"sender": self.sender, "payload": self.payload}


def genesis_head(session_id: str) -> bytes:
    return crypto.digest_value({"session_id": session_id})


class AuthenticatedContext:
    """Hash-chained session state: events, sequence counters, attestations."""

    def __init__(self, session_id: str, context_id: str, principal: str, created_at: int):
        self.session_id = session_id
        self.context_id = context_id
        self.principal = principal
        self.created_at = created_at
        self.head = genesis_head(session_id)
        self.events: list[ContextEvent] = []
        self.attestations: dict[str, Attestation] = {}
        self._last_sequence: dict[str, int] = {}

    # -- sequencing ----------------------------------------------------------

    def last_sequence(self, sender: str) -> int:
        return self._last_sequence.get(sender, 0)

    def next_sequence(self, sender: str) -> int:
        return self.last_sequence(sender) + 1

    def append_event(
        self, sender: str, payload: dict[str, Any], sequence: int | None = None
    ) -> bytes:
        """Append an event; rejects any sequence other than last+1 for the sender.

        The rejection happens before the chain mutates, so replays leave no
        trace in the head.
        """
        expected = self.next_sequence(sender)
        if sequence is None:
            sequence = expected
        elif sequence != expected:
            raise SequenceViolationError(
                f"sender {sender!r}: expected sequence {expected}, got {sequence}"
            )
        event = ContextEvent(sequence=sequence, sender=sender, payload=payload, head_after=b"")
        new_head = crypto.chain_append(self.head, event.chain_state(), sequence)
        event.head_after = new_head
        self.head = new_head
        self.events.append(event)
        self._last_sequence[sender] = sequence
        return new_head

    # -- attestations ---------------------------------------------------------

    def record_attestation(self, attestation: Attestation, registry: Registry) -> None:
        """Verify and chain an attestation; latest issuance wins for lookup."""
        try:
            issuer_key = registry.lookup_key(attestation.issuer)
        except RegistryError as exc:
            raise UnknownIssuerError(f"attestation issuer rejected: {exc}") from exc
        if not crypto.verify(
            issuer_key, attestation.signing_payload(), attestation.signature
        ):
            raise BadAttestationSignatureError(
                f"attestation {attestation.name!r} signature invalid"
            )
        pinned = crypto.public_key_bytes(issuer_key)
        self.append_event(
            attestation.issuer,
            {
                "kind": "attestation",
                "attestation": attestation.to_dict(),
                "issuer_key": base64.b64encode(pinned).decode("ascii"),
            },
        )
        self.attestations[attestation.name] = attestation

    def attestation_names(self) -> frozenset[str]:
        return frozenset(self.attestations)

    # -- verification ----------------------------------------------------------

    def verify(self) -> bool:
        """Recompute the full chain and re-verify every chained attestation."""
        head = genesis_head(self.session_id)
        last: dict[str, int] = {}
        for event in self.events:
            if event.sequence != last.get(event.sender, 0) + 1:
                return False
            last[event.sender] = event.sequence
            head = crypto.chain_append(head, event.chain_state(), event.sequence)
            if head != event.head_after:
                return False
            if event.payload.get("kind") == "attestation":
                try:
                    att = Attestation.from_dict(event.payload["attestation"])
                    pinned = crypto.load_public_key(
                        base64.b64decode(event.payload["issuer_key"])
                    )
                except (KeyError, ValueError, crypto.MalformedKeyError):
                    return False
                if not crypto.verify(pinned, att.signing_payload(), att.signature):
                    return False
        return head == self.head

    # -- persistence -------------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "context_id": self.context_id,
            "principal": self.principal,
            "created_at": self.created_at,
            "head": self.head.hex(),
            "events": [
                {
                    "sequence": e.sequence,
                    "sender": e.sender,
                    "payload": e.payload,
                    "head_after": e.head_after.hex(),
                }
                for e in self.events
            ],
            "attestations": {
                name: att.to_dict() for name, att in self.attestations.items()
            },
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> "AuthenticatedContext":
        ctx = cls(
            session_id=obj["session_id"],
            context_id=obj["context_id"],
            principal=obj["principal"],
            created_at=obj["created_at"],
        )
        for item in obj["events"]:
            event = ContextEvent(
                sequence=item["sequence"],
                sender=item["sender"],
                payload=item["payload"],
                head_after=bytes.fromhex(item["head_after"]),
            )
            ctx.events.append(event)
            ctx._last_sequence[event.sender] = event.sequence
            ctx.head = event.head_after
        for name, att in obj.get("attestations", {}).items():
            ctx.attestations[name] = Attestation.from_dict(att)
        return ctx


def new_session(
    principal_id: str,
    registry: Registry,
    clock: Clock,
    session_id: str | None = None,
    context_id: str | None = None,
) -> AuthenticatedContext:
    """Open a fresh authenticated context for a registered principal."""
    registry.lookup(principal_id)  # raises if unknown/revoked
    return AuthenticatedContext(
        session_id=session_id or f"sess-{uuid.uuid4().hex[:16]}",
        context_id=context_id or f"ctx-{uuid.uuid4().hex[:16]}",
        principal=principal_id,
        created_at=clock.epoch(),
    )

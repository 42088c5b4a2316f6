"""Agent Registry: identity records for agents, tools, and principals.

Registration happens at the finest granularity: individual tools get their
own keypairs under an agent parent, preserving cryptographic lineage.
Revocation cascades through that lineage at lookup time, so a revoked
agent takes its tools down with it on the next verification.

Persistence is an append-only JSON-lines file replayed into an in-memory
index; reads see an immutable snapshot, writes are serialized.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Iterator

from . import crypto
from .clock import Clock, SystemClock
from .errors import AwfError


class RegistryError(AwfError):
    code = "REGISTRY"


class UnknownEntityError(RegistryError):
    code = "UNKNOWN"


class RevokedEntityError(RegistryError):
    code = "REVOKED"


class ExpiredEntityError(RegistryError):
    code = "EXPIRED"


class UnknownParentError(RegistryError):
    code = "UNKNOWN_PARENT"


class DuplicateEntityError(RegistryError):
    code = "DUPLICATE"


class EntityKind(str, Enum):
    AGENT = "AGENT"
    TOOL = "TOOL"
    PRINCIPAL = "PRINCIPAL"


@dataclass(frozen=True)
class EntityRecord:
    entity_id: str
    kind: EntityKind
    public_key_der: bytes
    key_id: str
    parent: str | None
    created_at: int
    revoked: bool = False
    session_id: str | None = None
    expires_at: int | None = None

    def public_key(self):
        return crypto.load_public_key(self.public_key_der)

    def to_record(self) -> dict[str, Any]:
        return {
            "entity_id": self.entity_id,
            "kind": self.kind.value,
            "public_key": self.public_key_der,
            "key_id": self.key_id,
            "parent": self.parent,
            "created_at": self.created_at,
            "session_id": self.session_id,
            "expires_at": self.expires_at,
        }

    @classmethod
    def from_record(cls, obj: dict[str, Any]) -> "EntityRecord":
        import base64

        return cls(
            entity_id=obj["entity_id"],
            kind=EntityKind(obj["kind"]),
            public_key_der=base64.b64decode(obj["public_key"]),
            key_id=obj["key_id"],
            parent=obj.get("parent"),
            created_at=obj["created_at"],
            session_id=obj.get("session_id"),
            expires_at=obj.get("expires_at"),
        )


class Registry:
    """Entity records with key lookup, revocation, and session keypairs."""

    def __init__(self, path: Path | str | None = None, clock: Clock | None = None):
        self._clock = clock or SystemClock()
        self._path = Path(path) if path is not None else None
        self._records: dict[str, EntityRecord] = {}
        self._live_key_ids: set[str] = set()
        self._write_lock = threading.Lock()
        if self._path is not None and self._path.exists():
            self._replay()

    def _replay(self) -> None:
        assert self._path is not None
        with self._path.open("r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if obj["op"] == "register":
                    record = EntityRecord.from_record(obj["record"])
                    self._records[record.entity_id] = record
                    self._live_key_ids.add(record.key_id)
                elif obj["op"] == "revoke":
                    entity_id = obj["entity_id"]
                    record = self._records[entity_id]
                    self._records[entity_id] = replace(record, revoked=True)
                    self._live_key_ids.discard(record.key_id)

    def _append(self, obj: dict[str, Any]) -> None:
        if self._path is None:
            return
        with self._path.open("a", encoding="utf-8") as handle:
            handle.write(crypto.canonical_encode(obj).decode("ascii") + "\n")
            handle.flush()

    # -- writes ------------------------------------------------------------

    def register(
        self,
        kind: EntityKind | str,
        name: str,
        public_key,
        parent: str | None = None,
        session_id: str | None = None,
        expires_at: int | None = None,
    ) -> str:
        kind = EntityKind(kind)
        if not name:
            raise RegistryError("entity name must be non-empty")
        der = crypto.public_key_bytes(public_key)
        key_id = crypto.digest(der).hex()
        entity_id = f"{name}-{key_id[:8]}"
        with self._write_lock:
            if entity_id in self._records:
                raise DuplicateEntityError(f"entity {entity_id!r} already registered")
            if key_id in self._live_key_ids:
                raise DuplicateEntityError("key already bound to a live entity")
            if parent is not None:
                parent_record = self._records.get(parent)
                if parent_record is None or parent_record.revoked:
                    raise UnknownParentError(f"parent {parent!r} unknown or revoked")
            elif kind is EntityKind.TOOL:
                raise UnknownParentError("tool records require an agent parent")
            record = EntityRecord(
                entity_id=entity_id,
                kind=kind,
                public_key_der=der,
                key_id=key_id,
                parent=parent,
                created_at=self._clock.epoch(),
                session_id=session_id,
                expires_at=expires_at,
            )
            self._records[entity_id] = record
            self._live_key_ids.add(key_id)
            self._append({"op": "register", "record": record.to_record()})
        return entity_id

    def revoke(self, entity_id: str) -> None:
        with self._write_lock:
            record = self._records.get(entity_id)
            if record is None:
                raise UnknownEntityError(f"unknown entity {entity_id!r}")
            if record.revoked:
                return  # idempotent
            self._records[entity_id] = replace(record, revoked=True)
            self._live_key_ids.discard(record.key_id)
            self._append({"op": "revoke", "entity_id": entity_id})

    def issue_session_keypair(
        self,
        principal_id: str,
        session_id: str,
        expires_at: int | datetime,
        seed: bytes | None = None,
    ) -> tuple[str, crypto.KeyPair]:
        """Ephemeral per-session keypair bound to a registered principal.

        The record expires on its own; compromise of one session's key never
        reaches another session.
        """
        principal = self._records.get(principal_id)
        if principal is None or principal.revoked:
            raise UnknownEntityError(f"unknown principal {principal_id!r}")
        if isinstance(expires_at, datetime):
            expires_at = int(expires_at.timestamp())
        keypair = crypto.generate_keypair(seed=seed)
        entity_id = self.register(
            EntityKind.AGENT,
            f"session-{session_id}",
            keypair.public_key,
            parent=principal_id,
            session_id=session_id,
            expires_at=expires_at,
        )
        return entity_id, keypair

    # -- reads -------------------------------------------------------------

    def lookup(self, entity_id: str) -> EntityRecord:
        """Record for a live entity; revocation cascades through parents."""
        record = self._records.get(entity_id)
        if record is None:
            raise UnknownEntityError(f"unknown entity {entity_id!r}")
        node: EntityRecord | None = record
        while node is not None:
            if node.revoked:
                raise RevokedEntityError(f"entity {entity_id!r} is revoked")
            node = self._records.get(node.parent) if node.parent else None
        if record.expires_at is not None and self._clock.epoch() > record.expires_at:
            raise ExpiredEntityError(f"entity {entity_id!r} has expired")
        return record

    def lookup_key(self, entity_id: str):
        return self.lookup(entity_id).public_key()

    def exists(self, entity_id: str) -> bool:
        return entity_id in self._records

    def lineage(self, entity_id: str) -> list[str]:
        """Chain of entity ids from the entity up to its root."""
        chain = []
        node = self._records.get(entity_id)
        if node is None:
            raise UnknownEntityError(f"unknown entity {entity_id!r}")
        while node is not None:
            chain.append(node.entity_id)
            node = self._records.get(node.parent) if node.parent else None
        return chain

    def principal_of(self, entity_id: str) -> str:
        return self.lineage(entity_id)[-1]

    def records(self) -> Iterator[EntityRecord]:
        return iter(list(self._records.values()))

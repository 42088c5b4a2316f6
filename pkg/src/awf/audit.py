"""Tamper-evident audit log.

Every PEP decision and control-plane change lands here before the caller
sees a result (write-ahead). Records chain exactly like context events; a
separate head checkpoint file catches tail truncation, which a bare chain
cannot.

Blocked records carry the rejection reason and never the policy body.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from . import crypto, jsonl
from .errors import AwfError

CATEGORIES = ("INVOCATION", "BLOCKED", "REGISTRY", "POLICY", "ATTESTATION")


class AuditError(AwfError):
    code = "AUDIT"


@dataclass(frozen=True)
class AuditRecord:
    index: int
    timestamp: int
    category: str
    session_id: str | None = None
    caller: str | None = None
    target: str | None = None
    reason: str | None = None
    stage: int | None = None
    invocation_digest: str | None = None
    signatures: dict[str, str] = field(default_factory=dict)
    detail: str | None = None

    def chain_state(self) -> dict[str, Any]:
        return {
            "timestamp": self.timestamp,
            "category": self.category,
            "session_id": self.session_id,
            "caller": self.caller,
            "target": self.target,
            "reason": self.reason,
            "stage": self.stage,
            "invocation_digest": self.invocation_digest,
            "signatures": self.signatures,
            "detail": self.detail,
        }


class AuditLog:
    """Append-only chained log with a truncation-detecting head checkpoint."""

    def __init__(self, path: Path | str | None = None, log_id: str = "audit"):
        self._path = Path(path) if path is not None else None
        self._head_path = (
            self._path.with_suffix(".head") if self._path is not None else None
        )
        self._log_id = log_id
        self._genesis = crypto.digest_value({"audit_log": log_id})
        self._chain = crypto.HashChain(self._genesis)
        self._records: list[tuple[AuditRecord, bytes]] = []
        self._lock = threading.Lock()
        if self._path is not None and self._path.exists():
            self._replay()

    @property
    def head(self) -> bytes:
        return self._chain.head

    def __len__(self) -> int:
        return len(self._records)

    def _replay(self) -> None:
        assert self._path is not None
        try:
            for obj in jsonl.iter_strict(self._path):
                state = {k: v for k, v in obj.items() if k not in ("index", "head")}
                record = _record_from_line(obj)
                head = self._chain.append_at(record.index, state)
                if head != bytes.fromhex(obj["head"]):
                    raise AuditError(f"audit chain mismatch at index {record.index}")
                self._records.append((record, head))
        except (jsonl.MalformedLineError, KeyError, ValueError, crypto.SequenceGapError) as exc:
            raise AuditError(f"audit log failed verification on load: {exc}") from exc

    def log(self, category: str, **fields: Any) -> bytes:
        """Append one record; persisted (with checkpoint) before returning."""
        if category not in CATEGORIES:
            raise AuditError(f"unknown audit category {category!r}")
        with self._lock:
            index = self._chain.last_sequence + 1
            record = AuditRecord(index=index, category=category, **fields)
            head = self._chain.append_at(index, record.chain_state())
            self._records.append((record, head))
            if self._path is not None:
                line = dict(record.chain_state(), index=index, head=head.hex())
                try:
                    with self._path.open("a", encoding="utf-8") as handle:
                        handle.write(jsonl.dump_line(line))
                        handle.flush()
                    self._head_path.write_text(f"{index} {head.hex()}\n", encoding="utf-8")
                except OSError as exc:
                    raise AuditError(f"audit write failed: {exc}") from exc
        return head

    def records(self) -> Iterator[AuditRecord]:
        return iter([r for r, _ in self._records])

    def tail(self, n: int = 10) -> list[AuditRecord]:
        return [r for r, _ in self._records[-n:]]

    def verify(self) -> bool:
        if self._path is not None:
            return verify_log(self._path, self._head_path, log_id=self._log_id)
        chain = crypto.HashChain(self._genesis)
        for record, head in self._records:
            try:
                recomputed = chain.append_at(record.index, record.chain_state())
            except crypto.SequenceGapError:
                return False
            if recomputed != head:
                return False
        return chain.head == self._chain.head


def _record_from_line(obj: dict[str, Any]) -> AuditRecord:
    return AuditRecord(
        index=obj["index"],
        timestamp=obj["timestamp"],
        category=obj["category"],
        session_id=obj.get("session_id"),
        caller=obj.get("caller"),
        target=obj.get("target"),
        reason=obj.get("reason"),
        stage=obj.get("stage"),
        invocation_digest=obj.get("invocation_digest"),
        signatures=obj.get("signatures") or {},
        detail=obj.get("detail"),
    )


def verify_log(
    path: Path | str,
    head_path: Path | str | None = None,
    log_id: str = "audit",
) -> bool:
    """Recompute the full chain of a persisted log; checkpoint catches truncation."""
    path = Path(path)
    if head_path is None:
        head_path = path.with_suffix(".head")
    head_path = Path(head_path)

    chain = crypto.HashChain(crypto.digest_value({"audit_log": log_id}))
    try:
        if path.exists():
            for obj in jsonl.iter_strict(path):
                # The chain state covers every line field except the chain
                # outputs themselves, so a rename or edit of any key or value
                # (including null-valued ones) breaks head recomputation.
                state = {k: v for k, v in obj.items() if k not in ("index", "head")}
                head = chain.append_at(obj["index"], state)
                if head != bytes.fromhex(obj["head"]):
                    return False
    except (jsonl.MalformedLineError, KeyError, ValueError, TypeError, crypto.SequenceGapError):
        return False

    if head_path.exists():
        try:
            raw_index, raw_head = head_path.read_text(encoding="utf-8").split()
            if int(raw_index) != chain.last_sequence:
                return False
            if raw_head != chain.head.hex():
                return False
        except ValueError:
            return False
    elif chain.last_sequence != 0:
        # Records exist but no checkpoint: cannot rule out a truncated tail.
        return False
    return True

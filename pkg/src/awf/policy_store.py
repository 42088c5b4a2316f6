"""Tamper-evident policy storage.

Each stored policy carries the SHA-256 digest of its canonical document,
and every insertion advances an append-only hash chain over
(policy_id, digest) records. Reads re-verify the digest; ``verify_store``
recomputes the whole chain, so any mutation of a persisted record is
detectable.

Dangling ``extends`` targets are accepted at insertion (policies may be
provisioned out of order) and rejected at resolution.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterator, Mapping

from . import crypto, jsonl, mapl
from .errors import AwfError


class PolicyStoreError(AwfError):
    code = "POLICY_STORE"


class UnknownStoredPolicyError(PolicyStoreError, mapl.UnknownPolicyError):
    # Also a mapl.UnknownPolicyError so resolve_effective callers catch one type.
    code = "UNKNOWN"


class DuplicatePolicyError(PolicyStoreError):
    code = "DUP_ID"


class TamperedPolicyError(PolicyStoreError):
    code = "TAMPERED"


@dataclass(frozen=True)
class StoredPolicy:
    policy: mapl.Policy
    document: bytes  # canonical bytes of the source document
    digest: bytes
    index: int
    head: bytes  # store chain head after this insertion


def _chain_state(policy_id: str, digest: bytes) -> dict[str, Any]:
    return {"policy_id": policy_id, "digest": digest.hex()}


class PolicyStore:
    """Hash-chained policy store; in-memory when no path is given."""

    def __init__(self, path: Path | str | None = None, store_id: str = "policy-store"):
        self._path = Path(path) if path is not None else None
        self._store_id = store_id
        self._genesis = crypto.digest_value({"policy_store": store_id})
        self._chain = crypto.HashChain(self._genesis)
        self._entries: dict[str, StoredPolicy] = {}
        self._write_lock = threading.Lock()
        if self._path is not None and self._path.exists():
            self._replay()

    @property
    def head(self) -> bytes:
        return self._chain.head

    def __len__(self) -> int:
        return len(self._entries)

    def _replay(self) -> None:
        assert self._path is not None
        try:
            for obj in jsonl.iter_strict(self._path):
                document = obj["document"].encode("utf-8")
                digest = bytes.fromhex(obj["digest"])
                policy = mapl.parse_policy(document)
                head = self._chain.append_at(
                    obj["index"], _chain_state(policy.policy_id, digest)
                )
                if head != bytes.fromhex(obj["head"]):
                    raise TamperedPolicyError(
                        f"stored head mismatch at index {obj['index']}"
                    )
                self._entries[policy.policy_id] = StoredPolicy(
                    policy=policy,
                    document=document,
                    digest=digest,
                    index=obj["index"],
                    head=head,
                )
        except (jsonl.MalformedLineError, KeyError, ValueError, crypto.SequenceGapError) as exc:
            raise TamperedPolicyError(f"policy store failed verification on load: {exc}") from exc

    def put_policy(self, document: str | bytes | Mapping[str, Any]) -> str:
        """Parse, digest, chain, and persist a policy document."""
        policy = mapl.parse_policy(document)
        if isinstance(document, (str, bytes)):
            loaded = json.loads(document)
        else:
            loaded = dict(document)
        canonical = crypto.canonical_encode(loaded)
        digest = crypto.digest(canonical)
        with self._write_lock:
            if policy.policy_id in self._entries:
                raise DuplicatePolicyError(f"policy {policy.policy_id!r} already stored")
            index = self._chain.last_sequence + 1
            head = self._chain.append_at(index, _chain_state(policy.policy_id, digest))
            entry = StoredPolicy(
                policy=policy, document=canonical, digest=digest, index=index, head=head
            )
            self._entries[policy.policy_id] = entry
            if self._path is not None:
                with self._path.open("a", encoding="utf-8") as handle:
                    record = {
                        "index": index,
                        "policy_id": policy.policy_id,
                        "document": canonical.decode("utf-8"),
                        "digest": digest.hex(),
                        "head": head.hex(),
                    }
                    handle.write(jsonl.dump_line(record))
                    handle.flush()
        return policy.policy_id

    def get_policy(self, policy_id: str) -> mapl.Policy:
        """Fetch a policy, re-verifying its content digest on every read."""
        entry = self._entries.get(policy_id)
        if entry is None:
            raise UnknownStoredPolicyError(f"unknown policy {policy_id!r}")
        if crypto.digest(entry.document) != entry.digest:
            raise TamperedPolicyError(f"policy {policy_id!r} failed digest check")
        return entry.policy

    def get_digest(self, policy_id: str) -> bytes:
        entry = self._entries.get(policy_id)
        if entry is None:
            raise UnknownStoredPolicyError(f"unknown policy {policy_id!r}")
        return entry.digest

    def resolve_effective(self, policy_id: str) -> mapl.Policy:
        return mapl.resolve_effective(policy_id, self)

    def policy_ids(self) -> Iterator[str]:
        return iter(list(self._entries))

    def verify_store(self) -> bool:
        """Recompute digests and the full chain; False on any inconsistency."""
        if self._path is not None:
            return self._verify_file()
        chain = crypto.HashChain(self._genesis)
        for entry in sorted(self._entries.values(), key=lambda e: e.index):
            if crypto.digest(entry.document) != entry.digest:
                return False
            try:
                head = chain.append_at(
                    entry.index, _chain_state(entry.policy.policy_id, entry.digest)
                )
            except crypto.SequenceGapError:
                return False
            if head != entry.head:
                return False
        return chain.head == self._chain.head

    def _verify_file(self) -> bool:
        assert self._path is not None
        if not self._path.exists():
            return len(self._entries) == 0
        chain = crypto.HashChain(self._genesis)
        try:
            for obj in jsonl.iter_strict(self._path):
                if set(obj) != {"index", "policy_id", "document", "digest", "head"}:
                    return False
                document = obj["document"].encode("utf-8")
                recorded_digest = bytes.fromhex(obj["digest"])
                if crypto.digest(document) != recorded_digest:
                    return False
                policy = mapl.parse_policy(document)
                if policy.policy_id != obj["policy_id"]:
                    return False
                head = chain.append_at(
                    obj["index"], _chain_state(obj["policy_id"], recorded_digest)
                )
                if head != bytes.fromhex(obj["head"]):
                    return False
        except (
            jsonl.MalformedLineError,
            KeyError,
            ValueError,
            crypto.SequenceGapError,
            mapl.PolicyError,
        ):
            return False
        return chain.head == self._chain.head

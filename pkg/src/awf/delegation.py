"""Signed scope-narrowing delegation tokens.

A token grants the delegate at most what the delegator grants; chains fold
through policy intersection, so the effective scope is always
grant ∩ grant ∩ ... ∩ what the delegate already possesses. A compromised
intermediate can present whatever it likes: the fold never widens.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Iterable, Mapping, Sequence

from . import crypto, mapl
from .clock import Clock
from .errors import AwfError
from .registry import Registry, RegistryError


class DelegationError(AwfError):
    code = "DELEGATION"


class UnknownDelegationPartyError(DelegationError):
    code = "UNKNOWN"


class ExpiredAtIssueError(DelegationError):
    code = "EXPIRED_AT_ISSUE"


class BrokenChainError(DelegationError):
    code = "BROKEN_CHAIN"


class ExpiredTokenError(DelegationError):
    code = "EXPIRED"


class BadTokenSignatureError(DelegationError):
    code = "BAD_SIGNATURE"


@dataclass(frozen=True)
class DelegationToken:
    delegator: str
    delegate: str
    scope: mapl.Policy
    expiry: int
    signature: bytes

    def signing_payload(self) -> bytes:
        return crypto.canonical_encode(
            {
                "delegator": self.delegator,
                "delegate": self.delegate,
                "scope": self.scope.to_document(),
                "expiry": self.expiry,
            }
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "delegator": self.delegator,
            "delegate": self.delegate,
            "scope": self.scope.to_document(),
            "expiry": self.expiry,
            "signature": base64.b64encode(self.signature).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "DelegationToken":
        return cls(
            delegator=obj["delegator"],
            delegate=obj["delegate"],
            scope=mapl.parse_policy(obj["scope"]),
            expiry=obj["expiry"],
            signature=base64.b64decode(obj["signature"]),
        )


def _coerce_scope(scope: mapl.Policy | Mapping[str, Any], delegator: str, delegate: str) -> mapl.Policy:
    if isinstance(scope, mapl.Policy):
        return scope
    doc = dict(scope)
    doc.setdefault("policy_id", f"delegation:{delegator}->{delegate}")
    return mapl.parse_policy(doc)


def issue(
    delegator: str,
    keypair: crypto.KeyPair,
    delegate: str,
    scope: mapl.Policy | Mapping[str, Any],
    expiry: int | datetime,
    clock: Clock,
    registry: Registry,
) -> DelegationToken:
    """Issue a signed scope grant from delegator to delegate."""
    for party in (delegator, delegate):
        try:
            registry.lookup(party)
        except RegistryError as exc:
            raise UnknownDelegationPartyError(f"party {party!r} rejected: {exc}") from exc
    if isinstance(expiry, datetime):
        expiry = int(expiry.timestamp())
    if expiry <= clock.epoch():
        raise ExpiredAtIssueError("delegation expiry is not in the future")
    scope_policy = _coerce_scope(scope, delegator, delegate)
    unsigned = DelegationToken(delegator, delegate, scope_policy, expiry, b"")
    return DelegationToken(
        delegator, delegate, scope_policy, expiry,
        crypto.sign(keypair, unsigned.signing_payload()),
    )


def verify_token(token: DelegationToken, registry: Registry) -> bool:
    try:
        key = registry.lookup_key(token.delegator)
    except RegistryError:
        return False
    return crypto.verify(key, token.signing_payload(), token.signature)


def effective_scope(
    chain: Sequence[DelegationToken],
    delegate_base: mapl.Policy,
    clock: Clock,
    registry: Registry,
) -> mapl.Policy:
    """Fold a delegation chain into the delegate's effective policy.

    The chain must be contiguous (each token's delegate is the next
    delegator), every signature must verify against the delegator's
    registered key, and no token may be expired. Any failure invalidates
    the whole chain.
    """
    if not chain:
        return delegate_base
    now = clock.epoch()
    for earlier, later in zip(chain, chain[1:]):
        if earlier.delegate != later.delegator:
            raise BrokenChainError(
                f"chain break: {earlier.delegate!r} does not hand off to {later.delegator!r}"
            )
    effective = delegate_base
    for token in chain:
        if token.expiry <= now:
            raise ExpiredTokenError(f"delegation from {token.delegator!r} has expired")
        if not verify_token(token, registry):
            raise BadTokenSignatureError(
                f"delegation from {token.delegator!r} fails signature verification"
            )
        effective = mapl.intersect(effective, token.scope)
    return effective

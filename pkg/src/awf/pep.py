"""Policy Enforcement Point: the staged verification pipeline.

Every boundary crossing is a SignedInvocation driven through five stages:

  1. signature verification     caller/target identity, MAC, sequence,
                                session binding
  2. policy binding             the claimed policy exists and its stored
                                digest matches; the id is the signed one
  3. policy evaluation          effective policy = caller intent chain
                                ∩ delegation scopes ∩ resource policy,
                                then resource/param/attestation checks
  4. pre-invocation verifiers   registered custom checks, fail-closed
  5. post-invocation verifiers  output checks and transforms

Blocked invocations never reach the handler and never mutate the session
context. Every outcome is written to the audit log before the result is
returned, and results are signed by the target so callers can verify the
other direction.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Mapping, MutableMapping, Sequence

from . import crypto, delegation, mapl
from .audit import AuditLog
from .clock import Clock
from .context import AuthenticatedContext, make_attestation
from .errors import AwfError
from .policy_store import PolicyStore
from .registry import Registry, RegistryError


class PepError(AwfError):
    code = "PEP"


class DuplicateVerifierError(PepError):
    code = "DUPLICATE"


class UnknownSessionError(PepError):
    code = "UNKNOWN_SESSION"


class ResultStatus(str, Enum):
    ALLOWED_EXECUTED = "ALLOWED_EXECUTED"
    BLOCKED = "BLOCKED"


# Stage-1/2 rejection reasons; stage-3 reasons are mapl.DenyReason values
# and registry error codes pass through as-is.
INVALID_SIGNATURE = "INVALID_SIGNATURE"
POLICY_MISMATCH = "POLICY_MISMATCH"
SEQUENCE_VIOLATION = "SEQUENCE_VIOLATION"
CONTEXT_MISMATCH = "CONTEXT_MISMATCH"
VERIFIER_FAIL = "VERIFIER_FAIL"


@dataclass(frozen=True)
class SignedInvocation:
    """One boundary crossing, signed by the caller over every field below."""

    caller: str
    target: str
    operation: str
    args: Mapping[str, Any]
    policy_id: str
    session_id: str
    context_id: str
    sequence: int
    context_head: str  # hex digest of the caller's view of the context
    delegation_chain: tuple[delegation.DelegationToken, ...] = ()
    mac: bytes = b""

    def signed_fields(self) -> dict[str, Any]:
        return {
            "caller": self.caller,
            "target": self.target,
            "operation": self.operation,
            "args": dict(self.args),
            "policy_id": self.policy_id,
            "session_id": self.session_id,
            "context_id": self.context_id,
            "sequence": self.sequence,
            "context_head": self.context_head,
            "delegation_chain": [t.to_dict() for t in self.delegation_chain],
        }

    def signing_payload(self) -> bytes:
        return crypto.canonical_encode(self.signed_fields())

    def digest(self) -> bytes:
        return crypto.digest(self.signing_payload())

    def to_wire(self) -> dict[str, Any]:
        wire = self.signed_fields()
        wire["mac"] = base64.b64encode(self.mac).decode("ascii")
        return wire

    @classmethod
    def from_wire(cls, obj: Mapping[str, Any]) -> "SignedInvocation":
        return cls(
            caller=obj["caller"],
            target=obj["target"],
            operation=obj["operation"],
            args=dict(obj["args"]),
            policy_id=obj["policy_id"],
            session_id=obj["session_id"],
            context_id=obj["context_id"],
            sequence=obj["sequence"],
            context_head=obj["context_head"],
            delegation_chain=tuple(
                delegation.DelegationToken.from_dict(t)
                for t in obj.get("delegation_chain", [])
            ),
            mac=base64.b64decode(obj["mac"]),
        )


def build_invocation(
    caller: str,
    keypair: crypto.KeyPair,
    target: str,
    operation: str,
    args: Mapping[str, Any],
    policy_id: str,
    ctx: AuthenticatedContext,
    delegation_chain: Sequence[delegation.DelegationToken] = (),
) -> SignedInvocation:
    """Construct and sign an invocation against the current context state."""
    unsigned = SignedInvocation(
        caller=caller,
        target=target,
        operation=operation,
        args=dict(args),
        policy_id=policy_id,
        session_id=ctx.session_id,
        context_id=ctx.context_id,
        sequence=ctx.next_sequence(caller),
        context_head=ctx.head.hex(),
        delegation_chain=tuple(delegation_chain),
    )
    return replace(unsigned, mac=crypto.sign(keypair, unsigned.signing_payload()))


@dataclass(frozen=True)
class SignedResult:
    """The target's signed answer: either output or a reasoned rejection."""

    invocation_digest: str
    status: ResultStatus
    signer: str
    output: Any = None
    reason: str | None = None
    stage: int | None = None
    detail: str = ""
    signature: bytes = b""

    def signed_fields(self) -> dict[str, Any]:
        return {
            "invocation_digest": self.invocation_digest,
            "status": self.status.value,
            "signer": self.signer,
            "output": self.output,
            "reason": self.reason,
            "stage": self.stage,
            "detail": self.detail,
        }

    def signing_payload(self) -> bytes:
        return crypto.canonical_encode(self.signed_fields())

    def to_wire(self) -> dict[str, Any]:
        wire = self.signed_fields()
        wire["signature"] = base64.b64encode(self.signature).decode("ascii")
        return wire

    @classmethod
    def from_wire(cls, obj: Mapping[str, Any]) -> "SignedResult":
        return cls(
            invocation_digest=obj["invocation_digest"],
            status=ResultStatus(obj["status"]),
            signer=obj["signer"],
            output=obj.get("output"),
            reason=obj.get("reason"),
            stage=obj.get("stage"),
            detail=obj.get("detail", ""),
            signature=base64.b64decode(obj["signature"]),
        )

    @property
    def blocked(self) -> bool:
        return self.status is ResultStatus.BLOCKED


def verify_result(result: SignedResult, registry: Registry) -> bool:
    """Caller-side acceptance: the result must verify under the signer's key."""
    try:
        key = registry.lookup_key(result.signer)
    except RegistryError:
        return False
    return crypto.verify(key, result.signing_payload(), result.signature)


# ---------------------------------------------------------------------------
# Verifier contract
# ---------------------------------------------------------------------------


class VerifierStage(str, Enum):
    PRE = "PRE"
    POST = "POST"


class Outcome(str, Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    TRANSFORM = "TRANSFORM"


@dataclass(frozen=True)
class VerifierResult:
    outcome: Outcome
    reason: str = ""
    output: Any = None  # TRANSFORM replacement, POST stage only

    @classmethod
    def ok(cls) -> "VerifierResult":
        return cls(Outcome.PASS)

    @classmethod
    def fail(cls, reason: str) -> "VerifierResult":
        return cls(Outcome.FAIL, reason=reason)

    @classmethod
    def transform(cls, output: Any, reason: str = "") -> "VerifierResult":
        return cls(Outcome.TRANSFORM, reason=reason, output=output)


class Verifier:
    """Custom check plugged into stage 4 (PRE) or stage 5 (POST).

    Verifiers see the verified invocation and a read view of the context;
    they may only add restriction. Exceptions are treated as FAIL: a
    crashing verifier must not become a bypass.
    """

    name: str = "verifier"
    stage: VerifierStage = VerifierStage.PRE

    def check(
        self,
        inv: SignedInvocation,
        ctx: AuthenticatedContext,
        clock: Clock,
        output: Any = None,
    ) -> VerifierResult:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# The PEP
# ---------------------------------------------------------------------------

Handler = Callable[[Mapping[str, Any]], Any]
ResourceResolver = Callable[[str, Mapping[str, Any]], str]


def _default_resource(operation: str, args: Mapping[str, Any]) -> str:
    return f"tool:{operation}"


@dataclass
class _Blocked(Exception):
    reason: str
    stage: int
    detail: str


class PEP:
    """One enforcement point guarding one target tool.

    Instances share nothing mutable with each other; registry, policy
    store, and audit log are injected control-plane dependencies.
    """

    def __init__(
        self,
        name: str,
        target_id: str,
        target_keypair: crypto.KeyPair,
        registry: Registry,
        policy_store: PolicyStore,
        contexts: MutableMapping[str, AuthenticatedContext],
        audit: AuditLog,
        clock: Clock,
        resource_policy_id: str | None = None,
        resource_resolver: ResourceResolver | None = None,
        boundary: str = "S2_TOOL",
    ):
        self.name = name
        self.target_id = target_id
        self.target_keypair = target_keypair
        self.registry = registry
        self.policy_store = policy_store
        self.contexts = contexts
        self.audit = audit
        self.clock = clock
        self.resource_policy_id = resource_policy_id
        self.resource_resolver = resource_resolver or _default_resource
        self.boundary = boundary
        self.pre_verifiers: list[Verifier] = []
        self.post_verifiers: list[Verifier] = []
        # Stage entry counters; tests assert ordering invariants on these.
        self.stage_entries: dict[int, int] = {1: 0, 2: 0, 3: 0, 4: 0, 5: 0}

    def register_verifier(self, verifier: Verifier) -> None:
        bucket = (
            self.pre_verifiers
            if verifier.stage is VerifierStage.PRE
            else self.post_verifiers
        )
        if any(v.name == verifier.name for v in bucket):
            raise DuplicateVerifierError(
                f"verifier {verifier.name!r} already registered for {verifier.stage.value}"
            )
        bucket.append(verifier)

    # -- pipeline stages ----------------------------------------------------

    def _stage1_signature(self, inv: SignedInvocation) -> AuthenticatedContext:
        self.stage_entries[1] += 1
        ctx = self.contexts.get(inv.session_id)
        if ctx is None:
            raise _Blocked("UNKNOWN_SESSION", 1, f"session {inv.session_id!r} not known")
        try:
            caller_key = self.registry.lookup_key(inv.caller)
        except RegistryError as exc:
            raise _Blocked(exc.code, 1, f"caller rejected: {exc}") from exc
        try:
            self.registry.lookup(inv.target)
        except RegistryError as exc:
            raise _Blocked(exc.code, 1, f"target rejected: {exc}") from exc
        if not crypto.verify(caller_key, inv.signing_payload(), inv.mac):
            raise _Blocked(INVALID_SIGNATURE, 1, "invocation signature does not verify")
        expected = ctx.next_sequence(inv.caller)
        if inv.sequence != expected:
            raise _Blocked(
                SEQUENCE_VIOLATION,
                1,
                f"sequence {inv.sequence} rejected (expected {expected})",
            )
        if inv.context_id != ctx.context_id:
            raise _Blocked(CONTEXT_MISMATCH, 1, "invocation bound to a different context")
        if inv.context_head != ctx.head.hex():
            raise _Blocked(CONTEXT_MISMATCH, 1, "stale or foreign context head")
        return ctx

    def _stage2_policy_binding(self, inv: SignedInvocation) -> None:
        self.stage_entries[2] += 1
        # inv.policy_id comes from the MAC-verified payload, so the id
        # resolved below is byte-identical to the id the caller signed.
        # get_policy re-verifies the stored content digest on every read,
        # which is the substitution check: id and content must both agree.
        try:
            self.policy_store.get_policy(inv.policy_id)
        except AwfError as exc:
            raise _Blocked(POLICY_MISMATCH, 2, f"claimed policy rejected: {exc}") from exc

    def _stage3_policy_evaluation(
        self, inv: SignedInvocation, ctx: AuthenticatedContext
    ) -> str:
        self.stage_entries[3] += 1
        try:
            effective = self.policy_store.resolve_effective(inv.policy_id)
            if inv.delegation_chain:
                if inv.delegation_chain[-1].delegate != inv.caller:
                    raise delegation.BrokenChainError(
                        "delegation chain does not terminate at the caller"
                    )
                effective = delegation.effective_scope(
                    inv.delegation_chain, effective, self.clock, self.registry
                )
            if self.resource_policy_id is not None:
                effective = mapl.intersect(
                    effective, self.policy_store.resolve_effective(self.resource_policy_id)
                )
        except (mapl.PolicyError, delegation.DelegationError) as exc:
            raise _Blocked(exc.code, 3, str(exc)) from exc

        resource = self.resource_resolver(inv.operation, inv.args)
        decision = mapl.evaluate(
            effective,
            resource,
            params=inv.args,
            attestations=ctx.attestation_names(),
            now=self.clock.now(),
        )
        if not decision.allowed:
            assert decision.reason is not None
            raise _Blocked(decision.reason.value, 3, decision.detail)
        return resource

    def _run_verifier(
        self,
        verifier: Verifier,
        inv: SignedInvocation,
        ctx: AuthenticatedContext,
        output: Any = None,
    ) -> VerifierResult:
        try:
            return verifier.check(inv, ctx, self.clock, output=output)
        except Exception as exc:  # fail-closed: a crashing verifier blocks
            return VerifierResult.fail(f"verifier error: {exc}")

    def _stage4_pre_verifiers(
        self, inv: SignedInvocation, ctx: AuthenticatedContext
    ) -> None:
        self.stage_entries[4] += 1
        for verifier in self.pre_verifiers:
            result = self._run_verifier(verifier, inv, ctx)
            if result.outcome is Outcome.FAIL:
                raise _Blocked(VERIFIER_FAIL, 4, f"{verifier.name}: {result.reason}")
            if result.outcome is Outcome.TRANSFORM:
                raise _Blocked(
                    VERIFIER_FAIL, 4, f"{verifier.name}: PRE verifiers cannot transform"
                )

    def _stage5_post_verifiers(
        self, inv: SignedInvocation, ctx: AuthenticatedContext, output: Any
    ) -> Any:
        self.stage_entries[5] += 1
        for verifier in self.post_verifiers:
            result = self._run_verifier(verifier, inv, ctx, output=output)
            if result.outcome is Outcome.FAIL:
                raise _Blocked(VERIFIER_FAIL, 5, f"{verifier.name}: {result.reason}")
            if result.outcome is Outcome.TRANSFORM:
                output = result.output
        return output

    # -- entry point ----------------------------------------------------------

    def verify_and_execute(self, inv: SignedInvocation, handler: Handler) -> SignedResult:
        """Drive one invocation through the full pipeline.

        Exactly one SignedResult comes back, audited before return. Blocked
        paths (stages 1-4) never call the handler and never advance the
        context chain.
        """
        digest_hex = inv.digest().hex()
        try:
            ctx = self._stage1_signature(inv)
            self._stage2_policy_binding(inv)
            resource = self._stage3_policy_evaluation(inv, ctx)
            self._stage4_pre_verifiers(inv, ctx)

            output = handler(inv.args)

            try:
                output = self._stage5_post_verifiers(inv, ctx, output)
            except _Blocked as blocked:
                # Executed, then rejected on output: the result is withheld
                # and the block is recorded against stage 5.
                return self._finish_blocked(inv, digest_hex, blocked, executed=True, ctx=ctx)

            return self._finish_allowed(inv, ctx, digest_hex, resource, output)
        except _Blocked as blocked:
            return self._finish_blocked(inv, digest_hex, blocked)

    def _finish_allowed(
        self,
        inv: SignedInvocation,
        ctx: AuthenticatedContext,
        digest_hex: str,
        resource: str,
        output: Any,
    ) -> SignedResult:
        result = SignedResult(
            invocation_digest=digest_hex,
            status=ResultStatus.ALLOWED_EXECUTED,
            signer=self.target_id,
            output=output,
        )
        result = replace(
            result, signature=crypto.sign(self.target_keypair, result.signing_payload())
        )

        ctx.append_event(
            inv.caller,
            {
                "kind": "invocation",
                "boundary": self.boundary,
                "invocation_digest": digest_hex,
                "operation": inv.operation,
                "target": inv.target,
                "resource": resource,
            },
            sequence=inv.sequence,
        )
        ctx.append_event(
            self.target_id,
            {
                "kind": "result",
                "invocation_digest": digest_hex,
                "status": result.status.value,
            },
        )
        attestation = make_attestation(
            f"{inv.operation}_done",
            issuer=self.target_id,
            keypair=self.target_keypair,
            session_id=ctx.session_id,
            sequence=ctx.next_sequence(self.target_id),
            result_digest=crypto.digest_value(output),
            issued_at=self.clock.epoch(),
        )
        ctx.record_attestation(attestation, self.registry)

        self.audit.log(
            "INVOCATION",
            timestamp=self.clock.epoch(),
            session_id=inv.session_id,
            caller=inv.caller,
            target=inv.target,
            invocation_digest=digest_hex,
            signatures={
                "mac": base64.b64encode(inv.mac).decode("ascii"),
                "result": base64.b64encode(result.signature).decode("ascii"),
            },
            detail=f"{inv.operation} on {resource}",
        )
        self.audit.log(
            "ATTESTATION",
            timestamp=self.clock.epoch(),
            session_id=inv.session_id,
            caller=self.target_id,
            target=inv.caller,
            invocation_digest=digest_hex,
            signatures={
                "attestation": base64.b64encode(attestation.signature).decode("ascii")
            },
            detail=attestation.name,
        )
        return result

    def _finish_blocked(
        self,
        inv: SignedInvocation,
        digest_hex: str,
        blocked: _Blocked,
        executed: bool = False,
        ctx: AuthenticatedContext | None = None,
    ) -> SignedResult:
        result = SignedResult(
            invocation_digest=digest_hex,
            status=ResultStatus.BLOCKED,
            signer=self.target_id,
            reason=blocked.reason,
            stage=blocked.stage,
            detail=blocked.detail,
        )
        result = replace(
            result, signature=crypto.sign(self.target_keypair, result.signing_payload())
        )
        self.audit.log(
            "BLOCKED",
            timestamp=self.clock.epoch(),
            session_id=inv.session_id,
            caller=inv.caller,
            target=inv.target,
            reason=blocked.reason,
            stage=blocked.stage,
            invocation_digest=digest_hex,
            signatures={"mac": base64.b64encode(inv.mac).decode("ascii")},
            detail=blocked.detail,
        )
        return result

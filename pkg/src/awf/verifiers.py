"""Production custom verifiers for stages 4 and 5.

Four checks that need imperative logic beyond declarative policy: memory
update hygiene, workflow step ordering, tool-level RBAC with dangerous
sequence detection, and storage access/exfiltration control. All rate
windows are rolling, driven by the injected clock at one-second
resolution, and scoped per session.
"""

from __future__ import annotations

import posixpath
import re
from collections import deque
from fnmatch import fnmatch
from typing import Any, Callable, Iterable, Mapping

from .clock import Clock
from .context import AuthenticatedContext
from .pep import SignedInvocation, Verifier, VerifierResult, VerifierStage


class RollingCounter:
    """Per-key event counter over a sliding window (strictly newer than now-w)."""

    def __init__(self, window_seconds: int):
        self.window = window_seconds
        self._events: dict[str, deque[int]] = {}

    def count(self, key: str, now: int) -> int:
        events = self._events.get(key)
        if not events:
            return 0
        floor = now - self.window
        while events and events[0] <= floor:
            events.popleft()
        return len(events)

    def record(self, key: str, now: int) -> None:
        self._events.setdefault(key, deque()).append(now)


class MemoryIntegrityVerifier(Verifier):
    """Guards memory-update operations: protected fields and update rate."""

    stage = VerifierStage.PRE

    def __init__(
        self,
        update_operations: Iterable[str] = ("update",),
        protected_fields: Iterable[str] = ("goals", "system_prompt"),
        max_updates_per_minute: int = 10,
        name: str = "memory_integrity",
    ):
        self.name = name
        self.update_operations = frozenset(update_operations)
        self.protected_fields = frozenset(protected_fields)
        self.max_updates = max_updates_per_minute
        self._rate = RollingCounter(60)

    def check(self, inv: SignedInvocation, ctx: AuthenticatedContext, clock: Clock, output=None):
        if inv.operation not in self.update_operations:
            return VerifierResult.ok()
        field = str(inv.args.get("field", ""))
        if field in self.protected_fields:
            return VerifierResult.fail(f"field {field!r} is protected")
        now = clock.epoch()
        if self._rate.count(inv.session_id, now) >= self.max_updates:
            return VerifierResult.fail(
                f"memory update rate exceeded ({self.max_updates}/min)"
            )
        self._rate.record(inv.session_id, now)
        return VerifierResult.ok()


class WorkflowIntegrityVerifier(Verifier):
    """Enforces step prerequisites, session age, and non-repeatable steps."""

    stage = VerifierStage.PRE

    def __init__(
        self,
        prerequisites: Mapping[str, Iterable[str]] | None = None,
        max_session_age_seconds: int = 3600,
        non_repeatable: Iterable[str] = (),
        name: str = "workflow_integrity",
    ):
        self.name = name
        self.prerequisites = {
            op: tuple(needed) for op, needed in (prerequisites or {}).items()
        }
        self.max_session_age = max_session_age_seconds
        self.non_repeatable = frozenset(non_repeatable)

    def check(self, inv: SignedInvocation, ctx: AuthenticatedContext, clock: Clock, output=None):
        age = clock.epoch() - ctx.created_at
        if age > self.max_session_age:
            return VerifierResult.fail(
                f"session age {age}s exceeds limit {self.max_session_age}s"
            )
        present = ctx.attestation_names()
        for needed in self.prerequisites.get(inv.operation, ()):
            if needed not in present:
                return VerifierResult.fail(
                    f"prerequisite attestation {needed!r} missing for {inv.operation!r}"
                )
        if inv.operation in self.non_repeatable and f"{inv.operation}_done" in present:
            return VerifierResult.fail(
                f"non-repeatable step {inv.operation!r} already completed"
            )
        return VerifierResult.ok()


class ToolAuthorizationVerifier(Verifier):
    """Role-gated tool use, dangerous sequence detection, and call rate."""

    stage = VerifierStage.PRE

    def __init__(
        self,
        role_grants: Mapping[str, Iterable[str]] | None = None,
        dangerous_sequences: Iterable[tuple[str, str]] = (
            ("file_write", "command_execute"),
        ),
        max_calls_per_minute: int = 30,
        name: str = "tool_authorization",
    ):
        self.name = name
        self.role_grants = {
            role: frozenset(ops) for role, ops in (role_grants or {}).items()
        }
        self.governed = frozenset().union(*self.role_grants.values()) if self.role_grants else frozenset()
        self.dangerous_sequences = tuple(dangerous_sequences)
        self.max_calls = max_calls_per_minute
        self._rate = RollingCounter(60)

    def check(self, inv: SignedInvocation, ctx: AuthenticatedContext, clock: Clock, output=None):
        present = ctx.attestation_names()
        if inv.operation in self.governed:
            granted = any(
                role in present and inv.operation in ops
                for role, ops in self.role_grants.items()
            )
            if not granted:
                return VerifierResult.fail(
                    f"no role attestation grants operation {inv.operation!r}"
                )
        for first, second in self.dangerous_sequences:
            if inv.operation == second and f"{first}_done" in present:
                return VerifierResult.fail(
                    f"dangerous sequence {first!r} -> {second!r} in this session"
                )
        now = clock.epoch()
        if self._rate.count(inv.session_id, now) >= self.max_calls:
            return VerifierResult.fail(
                f"tool call rate exceeded ({self.max_calls}/min)"
            )
        self._rate.record(inv.session_id, now)
        return VerifierResult.ok()


# Output substrings that never leave a tool boundary unredacted.
SECRET_OUTPUT_PATTERNS = (
    r"AWS_SECRET[A-Z_]*\s*=\s*[^\s\"']+",
    r"(?i)\b(?:password|passwd|api_key|secret|token)\s*[:=]\s*[^\s\"']+",
    r"-----BEGIN [A-Z ]*PRIVATE KEY-----",
)


def _redact_strings(value: Any, patterns: tuple[re.Pattern[str], ...]) -> tuple[Any, bool]:
    if isinstance(value, str):
        redacted = value
        for pattern in patterns:
            redacted = pattern.sub("[REDACTED]", redacted)
        return redacted, redacted != value
    if isinstance(value, list):
        out = []
        changed = False
        for item in value:
            new, hit = _redact_strings(item, patterns)
            out.append(new)
            changed = changed or hit
        return out, changed
    if isinstance(value, dict):
        out = {}
        changed = False
        for key, item in value.items():
            new, hit = _redact_strings(item, patterns)
            out[key] = new
            changed = changed or hit
        return out, changed
    return value, False


class StorageIntegrityPreVerifier(Verifier):
    """Path traversal, secret-classification reads, and bulk-read detection."""

    stage = VerifierStage.PRE

    def __init__(
        self,
        root: str = "data",
        path_param: str = "path",
        read_operations: Iterable[str] = ("read",),
        classifier: Callable[[str], str | None] | None = None,
        secret_classifications: Iterable[str] = ("secret",),
        secret_path_patterns: Iterable[str] = ("*secret*", "*shadow*", "*private_key*"),
        bulk_read_threshold: int = 50,
        name: str = "storage_integrity_pre",
    ):
        self.name = name
        self.root = root.replace(":", "/")
        self.path_param = path_param
        self.read_operations = frozenset(read_operations)
        self.classifier = classifier
        self.secret_classifications = frozenset(secret_classifications)
        self.secret_path_patterns = tuple(secret_path_patterns)
        self.bulk_threshold = bulk_read_threshold
        self._reads = RollingCounter(60)

    def _escapes_root(self, path: str) -> bool:
        normalized = posixpath.normpath(path.replace(":", "/"))
        if normalized.startswith("/") or normalized == ".." or normalized.startswith("../"):
            return True
        return not (normalized == self.root or normalized.startswith(self.root + "/"))

    def check(self, inv: SignedInvocation, ctx: AuthenticatedContext, clock: Clock, output=None):
        path = inv.args.get(self.path_param)
        if path is None:
            return VerifierResult.ok()
        path = str(path)
        if self._escapes_root(path):
            return VerifierResult.fail(f"path {path!r} escapes the declared root")
        if inv.operation in self.read_operations:
            classification = self.classifier(path) if self.classifier else None
            if classification in self.secret_classifications:
                return VerifierResult.fail(f"path {path!r} is classified secret")
            if any(fnmatch(path, pattern) for pattern in self.secret_path_patterns):
                return VerifierResult.fail(f"path {path!r} matches a secret pattern")
            now = clock.epoch()
            if self._reads.count(inv.session_id, now) >= self.bulk_threshold:
                return VerifierResult.fail(
                    f"bulk read threshold exceeded ({self.bulk_threshold}/min)"
                )
            self._reads.record(inv.session_id, now)
        return VerifierResult.ok()


class StorageIntegrityPostVerifier(Verifier):
    """Redacts secret-looking values from outputs before they leave the PEP."""

    stage = VerifierStage.POST

    def __init__(
        self,
        patterns: Iterable[str] = SECRET_OUTPUT_PATTERNS,
        name: str = "storage_integrity_post",
    ):
        self.name = name
        self._patterns = tuple(re.compile(p) for p in patterns)

    def check(self, inv: SignedInvocation, ctx: AuthenticatedContext, clock: Clock, output=None):
        redacted, changed = _redact_strings(output, self._patterns)
        if changed:
            return VerifierResult.transform(redacted, reason="secret material redacted")
        return VerifierResult.ok()


def make_storage_verifiers(**kwargs) -> tuple[StorageIntegrityPreVerifier, StorageIntegrityPostVerifier]:
    """The storage check spans both stages; build the matched pair."""
    post_patterns = kwargs.pop("output_patterns", SECRET_OUTPUT_PATTERNS)
    return (
        StorageIntegrityPreVerifier(**kwargs),
        StorageIntegrityPostVerifier(patterns=post_patterns),
    )

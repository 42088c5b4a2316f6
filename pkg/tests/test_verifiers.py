"""The four production verifiers."""

from __future__ import annotations

import pytest

from awf.clock import ManualClock
from awf.context import AuthenticatedContext
from awf.pep import Outcome, SignedInvocation
from awf.verifiers import (
    MemoryIntegrityVerifier,
    StorageIntegrityPostVerifier,
    StorageIntegrityPreVerifier,
    ToolAuthorizationVerifier,
    WorkflowIntegrityVerifier,
    make_storage_verifiers,
)


def make_inv(operation: str, args: dict, session: str = "sess-1") -> SignedInvocation:
    return SignedInvocation(
        caller="caller-1",
        target="tool-1",
        operation=operation,
        args=args,
        policy_id="p",
        session_id=session,
        context_id="ctx-1",
        sequence=1,
        context_head="00" * 32,
    )


@pytest.fixture
def ctx(clock):
    return AuthenticatedContext("sess-1", "ctx-1", "alice", created_at=clock.epoch())


def grant(ctx, *names):
    # Tests poke attestation names directly; signature checks are covered
    # in the context tests.
    for name in names:
        ctx.attestations[name] = object()  # type: ignore[assignment]


class TestMemoryIntegrity:
    def test_protected_fields(self, ctx, clock):
        verifier = MemoryIntegrityVerifier()
        for field in ("goals", "system_prompt"):
            result = verifier.check(make_inv("update", {"field": field, "value": "x"}), ctx, clock)
            assert result.outcome is Outcome.FAIL
        ok = verifier.check(make_inv("update", {"field": "notes", "value": "x"}), ctx, clock)
        assert ok.outcome is Outcome.PASS

    def test_rate_boundary(self, ctx, clock):
        verifier = MemoryIntegrityVerifier()
        inv = make_inv("update", {"field": "notes", "value": "x"})
        for i in range(10):
            assert verifier.check(inv, ctx, clock).outcome is Outcome.PASS, f"update {i + 1}"
        assert verifier.check(inv, ctx, clock).outcome is Outcome.FAIL  # 11th

    def test_window_slides(self, ctx, clock):
        verifier = MemoryIntegrityVerifier()
        inv = make_inv("update", {"field": "notes", "value": "x"})
        for _ in range(10):
            verifier.check(inv, ctx, clock)
        clock.advance(61)
        assert verifier.check(inv, ctx, clock).outcome is Outcome.PASS

    def test_ignores_other_operations(self, ctx, clock):
        verifier = MemoryIntegrityVerifier()
        result = verifier.check(make_inv("read", {"field": "goals"}), ctx, clock)
        assert result.outcome is Outcome.PASS

    def test_sessions_counted_separately(self, ctx, clock):
        verifier = MemoryIntegrityVerifier()
        for _ in range(10):
            verifier.check(make_inv("update", {"field": "n"}), ctx, clock)
        other = make_inv("update", {"field": "n"}, session="sess-2")
        assert verifier.check(other, ctx, clock).outcome is Outcome.PASS


class TestWorkflowIntegrity:
    def test_missing_prerequisite(self, ctx, clock):
        verifier = WorkflowIntegrityVerifier(prerequisites={"send": ["report_done"]})
        result = verifier.check(make_inv("send", {}), ctx, clock)
        assert result.outcome is Outcome.FAIL
        grant(ctx, "report_done")
        assert verifier.check(make_inv("send", {}), ctx, clock).outcome is Outcome.PASS

    def test_session_age_boundary(self, ctx, clock):
        verifier = WorkflowIntegrityVerifier()
        clock.advance(3600)
        assert verifier.check(make_inv("send", {}), ctx, clock).outcome is Outcome.PASS
        clock.advance(1)  # 3601s
        assert verifier.check(make_inv("send", {}), ctx, clock).outcome is Outcome.FAIL

    def test_non_repeatable_step(self, ctx, clock):
        verifier = WorkflowIntegrityVerifier(non_repeatable={"approve"})
        assert verifier.check(make_inv("approve", {}), ctx, clock).outcome is Outcome.PASS
        grant(ctx, "approve_done")
        assert verifier.check(make_inv("approve", {}), ctx, clock).outcome is Outcome.FAIL


class TestToolAuthorization:
    def test_role_gate(self, ctx, clock):
        verifier = ToolAuthorizationVerifier(role_grants={"researcher": ["database_query"]})
        blocked = verifier.check(make_inv("database_query", {}), ctx, clock)
        assert blocked.outcome is Outcome.FAIL
        grant(ctx, "researcher")
        allowed = verifier.check(make_inv("database_query", {}), ctx, clock)
        assert allowed.outcome is Outcome.PASS

    def test_ungoverned_operation_passes(self, ctx, clock):
        verifier = ToolAuthorizationVerifier(role_grants={"researcher": ["database_query"]})
        assert verifier.check(make_inv("ping", {}), ctx, clock).outcome is Outcome.PASS

    def test_dangerous_sequence(self, ctx, clock):
        verifier = ToolAuthorizationVerifier()
        assert verifier.check(make_inv("command_execute", {}), ctx, clock).outcome is Outcome.PASS
        grant(ctx, "file_write_done")
        result = verifier.check(make_inv("command_execute", {}), ctx, clock)
        assert result.outcome is Outcome.FAIL
        assert "dangerous sequence" in result.reason

    def test_rate_boundary(self, ctx, clock):
        verifier = ToolAuthorizationVerifier()
        inv = make_inv("ping", {})
        for i in range(30):
            assert verifier.check(inv, ctx, clock).outcome is Outcome.PASS, f"call {i + 1}"
        assert verifier.check(inv, ctx, clock).outcome is Outcome.FAIL  # 31st


class TestStoragePre:
    def test_path_traversal(self, ctx, clock):
        verifier = StorageIntegrityPreVerifier(root="data")
        for evil in ("../../etc/shadow", "data:reports/../../etc/shadow", "/etc/shadow"):
            result = verifier.check(make_inv("read", {"path": evil}), ctx, clock)
            assert result.outcome is Outcome.FAIL, evil
        ok = verifier.check(make_inv("read", {"path": "data:finance:reports:q4"}), ctx, clock)
        assert ok.outcome is Outcome.PASS

    def test_secret_classification(self, ctx, clock):
        labels = {"data:vault:api_tokens": "secret", "data:vault:readme": "internal"}
        verifier = StorageIntegrityPreVerifier(root="data", classifier=labels.get)
        blocked = verifier.check(make_inv("read", {"path": "data:vault:api_tokens"}), ctx, clock)
        assert blocked.outcome is Outcome.FAIL
        ok = verifier.check(make_inv("read", {"path": "data:vault:readme"}), ctx, clock)
        assert ok.outcome is Outcome.PASS

    def test_secret_path_patterns(self, ctx, clock):
        verifier = StorageIntegrityPreVerifier(root="data")
        result = verifier.check(make_inv("read", {"path": "data:team:secrets"}), ctx, clock)
        assert result.outcome is Outcome.FAIL

    def test_bulk_read_boundary(self, ctx, clock):
        verifier = StorageIntegrityPreVerifier(root="data")
        for i in range(50):
            result = verifier.check(make_inv("read", {"path": f"data:bulk:f{i}"}), ctx, clock)
            assert result.outcome is Outcome.PASS, f"read {i + 1}"
        blocked = verifier.check(make_inv("read", {"path": "data:bulk:f50"}), ctx, clock)
        assert blocked.outcome is Outcome.FAIL  # 51st

    def test_writes_check_traversal_not_bulk(self, ctx, clock):
        verifier = StorageIntegrityPreVerifier(root="data")
        for i in range(60):
            result = verifier.check(
                make_inv("write", {"path": f"data:out:f{i}", "content": "x"}), ctx, clock
            )
            assert result.outcome is Outcome.PASS

    def test_pathless_operations_pass(self, ctx, clock):
        verifier = StorageIntegrityPreVerifier(root="data")
        assert verifier.check(make_inv("stat", {}), ctx, clock).outcome is Outcome.PASS


class TestStoragePost:
    def test_redacts_secret_assignments(self, ctx, clock):
        verifier = StorageIntegrityPostVerifier()
        output = {"content": "ok AWS_SECRET=abc123 done", "rows": ["password: hunter2"]}
        result = verifier.check(make_inv("read", {}), ctx, clock, output=output)
        assert result.outcome is Outcome.TRANSFORM
        assert "abc123" not in str(result.output)
        assert "hunter2" not in str(result.output)
        assert "[REDACTED]" in result.output["content"]

    def test_clean_output_untouched(self, ctx, clock):
        verifier = StorageIntegrityPostVerifier()
        output = {"content": "Q4 revenue grew 12%"}
        result = verifier.check(make_inv("read", {}), ctx, clock, output=output)
        assert result.outcome is Outcome.PASS

    def test_factory_pairs_share_nothing_but_config(self):
        pre, post = make_storage_verifiers(root="data")
        assert pre.stage.value == "PRE"
        assert post.stage.value == "POST"

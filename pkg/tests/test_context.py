"""Authenticated context: chains, sequences, attestations."""

from __future__ import annotations

import pytest

from awf.context import (
    AuthenticatedContext,
    BadAttestationSignatureError,
    SequenceViolationError,
    UnknownIssuerError,
    genesis_head,
    make_attestation,
    new_session,
)
from awf.crypto import digest_value, generate_keypair
from awf.registry import EntityKind, Registry, UnknownEntityError


@pytest.fixture
def registry(clock):
    return Registry(clock=clock)


@pytest.fixture
def world(registry, clock):
    alice_kp = generate_keypair(seed=b"alice")
    alice = registry.register(EntityKind.PRINCIPAL, "alice", alice_kp.public_key)
    tool_kp = generate_keypair(seed=b"tool")
    agent_kp = generate_keypair(seed=b"agent")
    agent = registry.register(EntityKind.AGENT, "agent", agent_kp.public_key)
    tool = registry.register(EntityKind.TOOL, "tool", tool_kp.public_key, parent=agent)
    ctx = new_session(alice, registry, clock, session_id="sess-1", context_id="ctx-1")
    return registry, ctx, {"alice": alice, "agent": agent, "tool": tool}, {
        "alice": alice_kp,
        "agent": agent_kp,
        "tool": tool_kp,
    }


def test_fresh_sessions_distinct_heads(registry, clock):
    kp = generate_keypair(seed=b"p")
    principal = registry.register(EntityKind.PRINCIPAL, "p", kp.public_key)
    a = new_session(principal, registry, clock)
    b = new_session(principal, registry, clock)
    assert a.head != b.head
    assert a.session_id != b.session_id


def test_genesis_head_formula(registry, clock):
    kp = generate_keypair(seed=b"p2")
    principal = registry.register(EntityKind.PRINCIPAL, "p2", kp.public_key)
    ctx = new_session(principal, registry, clock, session_id="sess-42")
    assert ctx.head == digest_value({"session_id": "sess-42"})
    assert ctx.head == genesis_head("sess-42")


def test_unknown_principal_rejected(registry, clock):
    with pytest.raises(UnknownEntityError):
        new_session("ghost-00000000", registry, clock)


def test_appends_then_verify(world):
    _, ctx, ids, _ = world
    for i in range(3):
        ctx.append_event(ids["agent"], {"n": i})
    assert ctx.verify()
    assert len(ctx.events) == 3
    assert ctx.last_sequence(ids["agent"]) == 3


def test_replay_rejected_before_chain_moves(world):
    _, ctx, ids, _ = world
    ctx.append_event(ids["agent"], {"n": 1}, sequence=1)
    ctx.append_event(ids["agent"], {"n": 2}, sequence=2)
    ctx.append_event(ids["agent"], {"n": 3}, sequence=3)
    head_before = ctx.head
    with pytest.raises(SequenceViolationError):
        ctx.append_event(ids["agent"], {"n": "replay"}, sequence=2)
    assert ctx.head == head_before
    assert ctx.verify()


def test_per_sender_sequences_independent(world):
    _, ctx, ids, _ = world
    ctx.append_event(ids["agent"], {"from": "agent"})
    ctx.append_event(ids["tool"], {"from": "tool"})
    assert ctx.last_sequence(ids["agent"]) == 1
    assert ctx.last_sequence(ids["tool"]) == 1
    assert ctx.verify()


def test_mutated_event_breaks_verify(world):
    _, ctx, ids, _ = world
    ctx.append_event(ids["agent"], {"n": 1})
    ctx.append_event(ids["agent"], {"n": 2})
    ctx.events[0].payload["n"] = 999
    assert not ctx.verify()


def test_empty_context_verifies(world):
    _, ctx, _, _ = world
    assert ctx.verify()


def test_attestation_round_trip(world, clock):
    registry, ctx, ids, keys = world
    att = make_attestation(
        "analysis_done",
        issuer=ids["tool"],
        keypair=keys["tool"],
        session_id=ctx.session_id,
        sequence=ctx.next_sequence(ids["tool"]),
        result_digest=digest_value({"rows": 3}),
        issued_at=clock.epoch(),
    )
    ctx.record_attestation(att, registry)
    assert "analysis_done" in ctx.attestation_names()
    assert ctx.verify()


def test_forged_attestation_rejected(world, clock):
    registry, ctx, ids, keys = world
    forged = make_attestation(
        "security_check_done",
        issuer=ids["tool"],
        keypair=keys["agent"],  # wrong key for the claimed issuer
        session_id=ctx.session_id,
        sequence=1,
        result_digest=digest_value({}),
        issued_at=clock.epoch(),
    )
    with pytest.raises(BadAttestationSignatureError):
        ctx.record_attestation(forged, registry)
    assert "security_check_done" not in ctx.attestation_names()


def test_unknown_issuer_rejected(world, clock):
    registry, ctx, _, keys = world
    att = make_attestation(
        "x_done",
        issuer="ghost-00000000",
        keypair=keys["tool"],
        session_id=ctx.session_id,
        sequence=1,
        result_digest=digest_value({}),
        issued_at=clock.epoch(),
    )
    with pytest.raises(UnknownIssuerError):
        ctx.record_attestation(att, registry)


def test_duplicate_attestation_latest_wins_both_chained(world, clock):
    registry, ctx, ids, keys = world
    for n in (1, 2):
        att = make_attestation(
            "step_done",
            issuer=ids["tool"],
            keypair=keys["tool"],
            session_id=ctx.session_id,
            sequence=ctx.next_sequence(ids["tool"]),
            result_digest=digest_value({"run": n}),
            issued_at=clock.epoch(),
        )
        ctx.record_attestation(att, registry)
    assert ctx.attestations["step_done"].result_digest == digest_value({"run": 2})
    chained = [e for e in ctx.events if e.payload.get("kind") == "attestation"]
    assert len(chained) == 2
    assert ctx.verify()


def test_pinned_key_survives_revocation(world, clock):
    registry, ctx, ids, keys = world
    att = make_attestation(
        "done",
        issuer=ids["tool"],
        keypair=keys["tool"],
        session_id=ctx.session_id,
        sequence=1,
        result_digest=digest_value({}),
        issued_at=clock.epoch(),
    )
    ctx.record_attestation(att, registry)
    registry.revoke(ids["agent"])  # cascades to the tool
    # Historical proof still verifies against the key pinned at record time.
    assert ctx.verify()


def test_serialization_round_trip(world, clock):
    registry, ctx, ids, keys = world
    ctx.append_event(ids["agent"], {"n": 1})
    att = make_attestation(
        "done",
        issuer=ids["tool"],
        keypair=keys["tool"],
        session_id=ctx.session_id,
        sequence=1,
        result_digest=digest_value({}),
        issued_at=clock.epoch(),
    )
    ctx.record_attestation(att, registry)
    restored = AuthenticatedContext.from_dict(ctx.to_dict())
    assert restored.head == ctx.head
    assert restored.verify()
    assert restored.attestation_names() == ctx.attestation_names()
    assert restored.next_sequence(ids["agent"]) == ctx.next_sequence(ids["agent"])

"""Registry records, lookup, revocation cascade, session keys."""

from __future__ import annotations

import pytest

from awf.crypto import generate_keypair
from awf.registry import (
    DuplicateEntityError,
    EntityKind,
    ExpiredEntityError,
    Registry,
    RevokedEntityError,
    UnknownEntityError,
    UnknownParentError,
)


@pytest.fixture
def registry(clock):
    return Registry(clock=clock)


def test_register_and_lookup(registry):
    kp = generate_keypair(seed=b"fs-agent")
    entity_id = registry.register(EntityKind.AGENT, "fs-agent", kp.public_key)
    assert entity_id.startswith("fs-agent-")
    from awf.crypto import public_key_bytes

    assert public_key_bytes(registry.lookup_key(entity_id)) == kp.public_bytes()


def test_tool_lineage(registry):
    agent_kp = generate_keypair(seed=b"agent")
    tool_kp = generate_keypair(seed=b"tool")
    agent_id = registry.register(EntityKind.AGENT, "fs-agent", agent_kp.public_key)
    tool_id = registry.register(
        EntityKind.TOOL, "read", tool_kp.public_key, parent=agent_id
    )
    assert registry.lookup(tool_id).parent == agent_id
    assert registry.lineage(tool_id) == [tool_id, agent_id]


def test_tool_requires_parent(registry):
    kp = generate_keypair(seed=b"orphan")
    with pytest.raises(UnknownParentError):
        registry.register(EntityKind.TOOL, "orphan", kp.public_key)


def test_register_under_revoked_agent_fails(registry):
    agent_kp = generate_keypair(seed=b"agent2")
    agent_id = registry.register(EntityKind.AGENT, "agent2", agent_kp.public_key)
    registry.revoke(agent_id)
    tool_kp = generate_keypair(seed=b"tool2")
    with pytest.raises(UnknownParentError):
        registry.register(EntityKind.TOOL, "tool2", tool_kp.public_key, parent=agent_id)


def test_unknown_lookup(registry):
    with pytest.raises(UnknownEntityError):
        registry.lookup_key("ghost-00000000")


def test_revocation(registry):
    kp = generate_keypair(seed=b"victim")
    entity_id = registry.register(EntityKind.AGENT, "victim", kp.public_key)
    registry.revoke(entity_id)
    with pytest.raises(RevokedEntityError):
        registry.lookup_key(entity_id)
    registry.revoke(entity_id)  # idempotent


def test_revocation_cascades_to_tools(registry):
    agent_kp = generate_keypair(seed=b"parent")
    tool_kp = generate_keypair(seed=b"child")
    agent_id = registry.register(EntityKind.AGENT, "parent", agent_kp.public_key)
    tool_id = registry.register(
        EntityKind.TOOL, "child", tool_kp.public_key, parent=agent_id
    )
    registry.revoke(agent_id)
    with pytest.raises(RevokedEntityError):
        registry.lookup_key(tool_id)


def test_key_uniqueness(registry):
    kp = generate_keypair(seed=b"shared")
    registry.register(EntityKind.AGENT, "first", kp.public_key)
    with pytest.raises(DuplicateEntityError):
        registry.register(EntityKind.AGENT, "second", kp.public_key)


def test_session_keypairs_distinct_and_attributable(registry, clock):
    principal_kp = generate_keypair(seed=b"alice")
    alice = registry.register(EntityKind.PRINCIPAL, "alice", principal_kp.public_key)
    expiry = clock.epoch() + 3600
    id1, kp1 = registry.issue_session_keypair(alice, "s1", expiry, seed=b"s1")
    id2, kp2 = registry.issue_session_keypair(alice, "s2", expiry, seed=b"s2")
    assert kp1.key_id != kp2.key_id
    assert registry.principal_of(id1) == alice
    assert registry.principal_of(id2) == alice


def test_session_key_expiry(registry, clock):
    principal_kp = generate_keypair(seed=b"bob")
    bob = registry.register(EntityKind.PRINCIPAL, "bob", principal_kp.public_key)
    entity_id, _ = registry.issue_session_keypair(
        bob, "s3", clock.epoch() + 60, seed=b"s3"
    )
    registry.lookup_key(entity_id)
    clock.advance(61)
    with pytest.raises(ExpiredEntityError):
        registry.lookup_key(entity_id)


def test_session_for_unknown_principal(registry, clock):
    with pytest.raises(UnknownEntityError):
        registry.issue_session_keypair("nobody-00000000", "s", clock.epoch() + 10)


def test_persistence_round_trip(tmp_path, clock):
    path = tmp_path / "registry.jsonl"
    registry = Registry(path=path, clock=clock)
    kp = generate_keypair(seed=b"persist")
    agent_id = registry.register(EntityKind.AGENT, "persist", kp.public_key)
    tool_kp = generate_keypair(seed=b"persist-tool")
    tool_id = registry.register(
        EntityKind.TOOL, "t", tool_kp.public_key, parent=agent_id
    )
    registry.revoke(tool_id)

    reloaded = Registry(path=path, clock=clock)
    assert reloaded.lookup(agent_id).kind is EntityKind.AGENT
    with pytest.raises(RevokedEntityError):
        reloaded.lookup(tool_id)

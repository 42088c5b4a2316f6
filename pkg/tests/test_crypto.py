"""Keypairs, canonical encoding, signatures, hash chains."""

from __future__ import annotations

import random

import pytest

from awf.crypto import (
    HashChain,
    SequenceGapError,
    UnencodableError,
    canonical_encode,
    chain_append,
    digest_value,
    generate_keypair,
    load_private_key,
    load_public_key,
    public_key_bytes,
    serialize_private_key,
    sign,
    verify,
)


class TestCanonicalEncode:
    def test_empty_map(self):
        assert canonical_encode({}) == b"{}"

    def test_key_order_independence(self):
        assert canonical_encode({"b": 1, "a": 2}) == canonical_encode({"a": 2, "b": 1})
        assert canonical_encode({"b": 1, "a": 2}) == b'{"a":2,"b":1}'

    def test_nested_structures(self):
        value = {"list": [1, "x", True, None], "map": {"k": b"bytes"}}
        encoded = canonical_encode(value)
        assert b" " not in encoded
        assert b"Ynl0ZXM=" in encoded  # base64 of b"bytes"

    def test_floats_rejected(self):
        with pytest.raises(UnencodableError):
            canonical_encode({"x": 1.5})
        with pytest.raises(UnencodableError):
            canonical_encode([0.0])

    def test_non_string_keys_rejected(self):
        with pytest.raises(UnencodableError):
            canonical_encode({1: "x"})

    def test_random_reorderings_digest_equal(self):
        # Structural-equality oracle: shuffling construction order of a map
        # never changes the digest.
        rng = random.Random(7)
        for _ in range(500):
            n = rng.randint(1, 10)
            items = [(f"k{i}", rng.randint(-1000, 1000)) for i in range(n)]
            shuffled = items[:]
            rng.shuffle(shuffled)
            base = {k: {"v": v, "tags": [k, str(v)]} for k, v in items}
            other = {k: {"tags": [k, str(v)], "v": v} for k, v in shuffled}
            assert digest_value(base) == digest_value(other)


class TestSignatures:
    def test_round_trip(self, keypair):
        payload = canonical_encode({"op": "read", "seq": 1})
        mac = sign(keypair, payload)
        assert verify(keypair.public_key, payload, mac)

    def test_distinct_key_ids(self):
        a = generate_keypair()
        b = generate_keypair()
        assert a.key_id != b.key_id

    def test_wrong_key_rejects(self, keypair):
        other = generate_keypair(seed=b"other-key")
        payload = canonical_encode({"x": 1})
        mac = sign(keypair, payload)
        assert not verify(other.public_key, payload, mac)

    def test_payload_mutation_rejects(self, keypair):
        rng = random.Random(11)
        payload = canonical_encode({"args": {"path": "data:finance:q4"}, "seq": 3})
        mac = sign(keypair, payload)
        for _ in range(200):
            pos = rng.randrange(len(payload))
            flipped = bytes(
                b ^ (rng.randint(1, 255) if i == pos else 0)
                for i, b in enumerate(payload)
            )
            assert not verify(keypair.public_key, flipped, mac)

    def test_signature_mutation_rejects(self, keypair):
        rng = random.Random(13)
        payload = canonical_encode({"x": "y"})
        mac = sign(keypair, payload)
        for _ in range(100):
            pos = rng.randrange(len(mac))
            broken = bytes(
                b ^ (rng.randint(1, 255) if i == pos else 0) for i, b in enumerate(mac)
            )
            assert not verify(keypair.public_key, payload, broken)

    def test_seeded_keys_are_reproducible(self):
        a = generate_keypair(seed=b"world:fs-agent")
        b = generate_keypair(seed=b"world:fs-agent")
        assert a.key_id == b.key_id

    def test_deterministic_signing(self, keypair):
        payload = canonical_encode({"n": 4})
        assert sign(keypair, payload) == sign(keypair, payload)

    def test_key_serialization_round_trip(self, keypair):
        pem = serialize_private_key(keypair)
        restored = load_private_key(pem)
        assert restored.key_id == keypair.key_id
        der = public_key_bytes(keypair.public_key)
        assert verify(load_public_key(der), b"m", sign(keypair, b"m"))


class TestHashChain:
    def test_chain_append_deterministic(self):
        head = digest_value({"session_id": "s1"})
        once = chain_append(head, {"event": "a"}, 1)
        twice = chain_append(head, {"event": "a"}, 1)
        assert once == twice
        assert len(once) == 32

    def test_state_change_changes_digest(self):
        head = digest_value({"session_id": "s1"})
        assert chain_append(head, {"event": "a"}, 1) != chain_append(head, {"event": "b"}, 1)
        assert chain_append(head, {"event": "a"}, 1) != chain_append(head, {"event": "a"}, 2)

    def test_sequence_gap_rejected(self):
        chain = HashChain(digest_value({"session_id": "s1"}))
        chain.append({"e": 1})
        chain.append({"e": 2})
        with pytest.raises(SequenceGapError):
            chain.append_at(2, {"e": "replay"})
        with pytest.raises(SequenceGapError):
            chain.append_at(5, {"e": "gap"})
        assert chain.last_sequence == 2

    def test_mutated_history_breaks_recomputation(self):
        genesis = digest_value({"session_id": "s2"})
        events = [{"n": i, "payload": f"e{i}"} for i in range(1, 8)]
        chain = HashChain(genesis)
        for event in events:
            chain.append(event)
        true_head = chain.head

        tampered = [dict(e) for e in events]
        tampered[3]["payload"] = "evil"
        replay = HashChain(genesis)
        for event in tampered:
            replay.append(event)
        assert replay.head != true_head

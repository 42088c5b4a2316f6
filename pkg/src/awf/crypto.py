"""ECDSA P-256 keypairs, canonical byte encoding, and SHA-256 hash chains.

Every integrity guarantee in the package bottoms out here. Signatures are
always computed over ``canonical_encode`` output, so two structurally equal
payloads sign and verify identically regardless of construction order, and
event history is bound through fixed-layout hash chains.

Floats are rejected from signed payloads: cross-platform float formatting
is not byte-stable, and byte-exactness is the whole point. Quantities are
integers with explicit units.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import dataclass
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.ec import (
    EllipticCurvePrivateKey,
    EllipticCurvePublicKey,
)

from .errors import AwfError

DIGEST_LEN = 32

_CURVE = ec.SECP256R1()
# P-256 group order, used when deriving private scalars from seeds.
_CURVE_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
# RFC 6979 deterministic nonces: identical (key, payload) -> identical signature,
# which keeps transcripts and audit chains byte-reproducible.
_SIGN_ALGO = ec.ECDSA(hashes.SHA256(), deterministic_signing=True)
_VERIFY_ALGO = ec.ECDSA(hashes.SHA256())


class UnencodableError(AwfError):
    """Payload contains a type canonical encoding refuses (e.g. float)."""

    code = "UNENCODABLE"


class MalformedKeyError(AwfError):
    code = "MALFORMED_KEY"


class SequenceGapError(AwfError):
    """Chain append attempted with a sequence other than last + 1."""

    code = "SEQUENCE_GAP"


def _to_jsonable(value: Any) -> Any:
    if value is None or isinstance(value, bool):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        raise UnencodableError("floats are not allowed in canonical payloads")
    if isinstance(value, str):
        return value
    if isinstance(value, (bytes, bytearray)):
        return base64.b64encode(bytes(value)).decode("ascii")
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise UnencodableError(f"map keys must be strings, got {type(k).__name__}")
            out[k] = _to_jsonable(v)
        return out
    raise UnencodableError(f"cannot canonically encode {type(value).__name__}")


def canonical_encode(value: Any) -> bytes:
    """Deterministic byte encoding of a structured payload.

    Map keys are sorted lexicographically, there is no insignificant
    whitespace, integers render in minimal decimal, and byte strings render
    as base64. Structurally equal values produce identical bytes.
    """
    jsonable = _to_jsonable(value)
    return json.dumps(
        jsonable, sort_keys=True, separators=(",", ":"), ensure_ascii=True
    ).encode("ascii")


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def digest_value(value: Any) -> bytes:
    """SHA-256 over the canonical encoding of a structured payload."""
    return digest(canonical_encode(value))


@dataclass(frozen=True)
class KeyPair:
    """ECDSA P-256 keypair with a content-derived identifier.

    ``key_id`` is the SHA-256 hex digest of the DER-encoded public key, so
    it is collision-free for distinct keys and stable across processes.
    """

    private_key: EllipticCurvePrivateKey
    public_key: EllipticCurvePublicKey
    key_id: str

    def public_bytes(self) -> bytes:
        return public_key_bytes(self.public_key)


def public_key_bytes(public_key: EllipticCurvePublicKey) -> bytes:
    return public_key.public_bytes(
        serialization.Encoding.DER,
        serialization.PublicFormat.SubjectPublicKeyInfo,
    )


def load_public_key(der: bytes) -> EllipticCurvePublicKey:
    try:
        key = serialization.load_der_public_key(der)
    except Exception as exc:
        raise MalformedKeyError(f"cannot load public key: {exc}") from exc
    if not isinstance(key, EllipticCurvePublicKey):
        raise MalformedKeyError("not an EC public key")
    return key


def key_id_for(public_key: EllipticCurvePublicKey) -> str:
    return digest(public_key_bytes(public_key)).hex()


def generate_keypair(seed: bytes | None = None) -> KeyPair:
    """Generate a fresh keypair, or derive one deterministically from a seed.

    Seeded derivation exists so simulated worlds are byte-reproducible;
    anything security-relevant should pass ``seed=None``.
    """
    if seed is None:
        private_key = ec.generate_private_key(_CURVE)
    else:
        counter = 0
        while True:
            material = hashlib.sha256(seed + counter.to_bytes(4, "big")).digest()
            scalar = int.from_bytes(material, "big")
            if 1 <= scalar < _CURVE_ORDER:
                break
            counter += 1
        private_key = ec.derive_private_key(scalar, _CURVE)
    public_key = private_key.public_key()
    return KeyPair(private_key=private_key, public_key=public_key, key_id=key_id_for(public_key))


def keypair_from_private(private_key: EllipticCurvePrivateKey) -> KeyPair:
    public_key = private_key.public_key()
    return KeyPair(private_key=private_key, public_key=public_key, key_id=key_id_for(public_key))


def serialize_private_key(key: KeyPair) -> bytes:
    return key.private_key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )


def load_private_key(pem: bytes) -> KeyPair:
    try:
        key = serialization.load_pem_private_key(pem, password=None)
    except Exception as exc:
        raise MalformedKeyError(f"cannot load private key: {exc}") from exc
    if not isinstance(key, EllipticCurvePrivateKey):
        raise MalformedKeyError("not an EC private key")
    return keypair_from_private(key)


def sign(key: KeyPair, payload: bytes) -> bytes:
    """Sign canonical payload bytes; returns a DER-encoded ECDSA signature."""
    return key.private_key.sign(payload, _SIGN_ALGO)


def verify(public_key: EllipticCurvePublicKey, payload: bytes, signature: bytes) -> bool:
    try:
        public_key.verify(signature, payload, _VERIFY_ALGO)
        return True
    except InvalidSignature:
        return False
    except Exception:
        # Garbage signature bytes (wrong length, bad DER) are just "no".
        return False


def chain_append(head: bytes, state: Any, sequence: int) -> bytes:
    """Advance a hash chain: SHA-256(head || canonical(state) || seq_be64).

    The layout is length-unambiguous: the head is fixed at 32 bytes and the
    sequence at 8, so no two (head, state, sequence) triples collide on
    concatenation boundaries.
    """
    if len(head) != DIGEST_LEN:
        raise ValueError(f"chain head must be {DIGEST_LEN} bytes, got {len(head)}")
    if sequence < 0:
        raise ValueError("sequence must be non-negative")
    return digest(head + canonical_encode(state) + struct.pack(">Q", sequence))


class HashChain:
    """A hash chain with strict sequence accounting.

    Appends must use sequence ``last + 1``; anything else (gaps, replays)
    raises SequenceGapError before the head moves.
    """

    def __init__(self, genesis: bytes, last_sequence: int = 0):
        if len(genesis) != DIGEST_LEN:
            raise ValueError("genesis head must be a 32-byte digest")
        self.head = genesis
        self.last_sequence = last_sequence

    def append(self, state: Any) -> bytes:
        return self.append_at(self.last_sequence + 1, state)

    def append_at(self, sequence: int, state: Any) -> bytes:
        if sequence != self.last_sequence + 1:
            raise SequenceGapError(
                f"expected sequence {self.last_sequence + 1}, got {sequence}"
            )
        self.head = chain_append(self.head, state, sequence)
        self.last_sequence = sequence
        return self.head

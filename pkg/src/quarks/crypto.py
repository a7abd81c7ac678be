"""Cryptographic primitives: key pairs, signatures, node-issued
certificates, public-key sealing, authenticated message encryption,
nonces, and hashing.

Key material is a composite of two curve-25519 keys so one identity both
signs and receives sealed payloads: bytes 0..31 are the Ed25519 half
(signatures), bytes 32..63 the X25519 half (sealing).  All operations are
pure or draw only from ``os.urandom`` and are safe to call concurrently.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from .errors import AuthError, ValidationError

PUBLIC_KEY_LEN = 64  # ed25519 pk || x25519 pk
PRIVATE_KEY_LEN = 64  # ed25519 seed || x25519 scalar
NONCE_LEN = 16
DIGEST_LEN = 32
CHANNEL_KEY_LEN = 32
SEAL_LIMIT = 1024
MESSAGE_LIMIT = 64 * 1024
MAX_USERNAME_BYTES = 64

_AEAD_NONCE_LEN = 12
_SEAL_INFO = b"quarks.seal.v1"


def lp(field: bytes) -> bytes:
    """Length-prefix a field for canonical serialization.

    4-byte big-endian length followed by the raw bytes; concatenating
    prefixed fields in a fixed order is injective on the field tuple.
    """
    return struct.pack(">I", len(field)) + field


def lp_join(*fields: bytes) -> bytes:
    return b"".join(lp(f) for f in fields)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def fresh_nonce() -> bytes:
    """16 random bytes from the OS entropy source."""
    return os.urandom(NONCE_LEN)


def generate_channel_secret() -> bytes:
    return os.urandom(CHANNEL_KEY_LEN)


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes

    def __post_init__(self):
        if len(self.public_key) != PUBLIC_KEY_LEN:
            raise ValidationError("public key must be %d bytes" % PUBLIC_KEY_LEN)
        if len(self.private_key) != PRIVATE_KEY_LEN:
            raise ValidationError("private key must be %d bytes" % PRIVATE_KEY_LEN)


def generate_keypair() -> KeyPair:
    """Fresh composite key pair (signing half + sealing half)."""
    ed = Ed25519PrivateKey.generate()
    x = X25519PrivateKey.generate()
    ed_pub = ed.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    x_pub = x.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    ed_priv = ed.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
    x_priv = x.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
    return KeyPair(public_key=ed_pub + x_pub, private_key=ed_priv + x_priv)


def _signing_key(private_key: bytes) -> Ed25519PrivateKey:
    if len(private_key) != PRIVATE_KEY_LEN:
        raise ValidationError("malformed private key")
    return Ed25519PrivateKey.from_private_bytes(private_key[:32])


def sign(private_key: bytes, message: bytes) -> bytes:
    """Detached Ed25519 signature over exactly ``message``."""
    return _signing_key(private_key).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff the signature is valid; never raises on garbage input."""
    if not isinstance(public_key, bytes) or len(public_key) != PUBLIC_KEY_LEN:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key[:32]).verify(signature, message)
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False


def seal_to_public_key(public_key: bytes, plaintext: bytes) -> bytes:
    """Seal a small payload so only the key holder can open it.

    Ephemeral X25519 agreement against the recipient's sealing half,
    HKDF-SHA256 key derivation bound to both public values, then
    AES-256-GCM.  Layout: eph_pub(32) || nonce(12) || ciphertext.
    """
    if len(public_key) != PUBLIC_KEY_LEN:
        raise ValidationError("malformed public key")
    if len(plaintext) > SEAL_LIMIT:
        raise ValidationError("seal plaintext exceeds %d bytes" % SEAL_LIMIT)
    recipient = X25519PublicKey.from_public_bytes(public_key[32:])
    eph = X25519PrivateKey.generate()
    eph_pub = eph.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    shared = eph.exchange(recipient)
    key = HKDF(
        algorithm=SHA256(),
        length=32,
        salt=eph_pub + public_key[32:],
        info=_SEAL_INFO,
    ).derive(shared)
    nonce = os.urandom(_AEAD_NONCE_LEN)
    ct = AESGCM(key).encrypt(nonce, plaintext, None)
    return eph_pub + nonce + ct


def open_with_private_key(private_key: bytes, sealed: bytes) -> bytes:
    """Inverse of :func:`seal_to_public_key`; raises on any tampering."""
    if len(private_key) != PRIVATE_KEY_LEN:
        raise ValidationError("malformed private key")
    if len(sealed) < 32 + _AEAD_NONCE_LEN + 16:
        raise AuthError("sealed blob too short")
    eph_pub, nonce, ct = sealed[:32], sealed[32:44], sealed[44:]
    priv = X25519PrivateKey.from_private_bytes(private_key[32:])
    my_pub_raw = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    key = HKDF(
        algorithm=SHA256(),
        length=32,
        salt=eph_pub + my_pub_raw,
        info=_SEAL_INFO,
    ).derive(shared)
    try:
        return AESGCM(key).decrypt(nonce, ct, None)
    except InvalidTag:
        raise AuthError("sealed blob failed authentication") from None


def encrypt_message(channel_secret: bytes, plaintext: bytes) -> bytes:
    """AES-256-GCM under the channel secret; random nonce prepended."""
    if len(channel_secret) != CHANNEL_KEY_LEN:
        raise ValidationError("channel secret must be 32 bytes")
    if len(plaintext) > MESSAGE_LIMIT:
        raise ValidationError("message exceeds %d bytes" % MESSAGE_LIMIT)
    nonce = os.urandom(_AEAD_NONCE_LEN)
    return nonce + AESGCM(channel_secret).encrypt(nonce, plaintext, None)


def decrypt_message(channel_secret: bytes, ciphertext: bytes) -> bytes:
    if len(channel_secret) != CHANNEL_KEY_LEN:
        raise ValidationError("channel secret must be 32 bytes")
    if len(ciphertext) < _AEAD_NONCE_LEN + 16:
        raise AuthError("ciphertext too short")
    nonce, ct = ciphertext[:_AEAD_NONCE_LEN], ciphertext[_AEAD_NONCE_LEN:]
    try:
        return AESGCM(channel_secret).decrypt(nonce, ct, None)
    except InvalidTag:
        raise AuthError("message failed authentication") from None


@dataclass(frozen=True)
class Certificate:
    """Identity credential binding a username and public key to the
    issuing node."""

    username: str
    node_address: str
    public_key: bytes
    issued_at: int  # UTC seconds
    signature: bytes

    def fields_bytes(self) -> bytes:
        """Canonical serialization of the signed fields."""
        return lp_join(
            self.username.encode("utf-8"),
            self.node_address.encode("utf-8"),
            self.public_key,
            struct.pack(">Q", self.issued_at),
        )

    def serialize(self) -> bytes:
        return self.fields_bytes() + lp(self.signature)

    def digest(self) -> bytes:
        """Certificate identity for ACL membership and vault keys."""
        cached = getattr(self, "_digest", None)
        if cached is None:
            cached = sha256(self.serialize())
            object.__setattr__(self, "_digest", cached)
        return cached


def validate_username(username: str) -> None:
    if not username or len(username.encode("utf-8")) > MAX_USERNAME_BYTES:
        raise ValidationError("username must be 1..%d bytes" % MAX_USERNAME_BYTES)


def issue_certificate(
    ca_keypair: KeyPair,
    username: str,
    node_address: str,
    subject_public_key: bytes,
    issued_at: int,
) -> Certificate:
    """Sign a certificate with the node CA key.

    Ed25519 signing is deterministic, so identical inputs produce
    byte-identical certificates.
    """
    validate_username(username)
    if not node_address:
        raise ValidationError("node_address must be non-empty")
    if len(subject_public_key) != PUBLIC_KEY_LEN:
        raise ValidationError("subject public key must be %d bytes" % PUBLIC_KEY_LEN)
    unsigned = Certificate(
        username=username,
        node_address=node_address,
        public_key=subject_public_key,
        issued_at=issued_at,
        signature=b"",
    )
    return Certificate(
        username=username,
        node_address=node_address,
        public_key=subject_public_key,
        issued_at=issued_at,
        signature=sign(ca_keypair.private_key, unsigned.fields_bytes()),
    )


def verify_certificate(ca_public_key: bytes, certificate: Certificate) -> bool:
    """True iff the issuer signature verifies and field invariants hold."""
    try:
        validate_username(certificate.username)
    except ValidationError:
        return False
    if not certificate.node_address:
        return False
    if len(certificate.public_key) != PUBLIC_KEY_LEN:
        return False
    return verify(ca_public_key, certificate.fields_bytes(), certificate.signature)

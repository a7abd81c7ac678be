"""Client keystore: key pair, certificate, and cached channel secrets.

Persisted as a single JSON file whose secret fields (private key and
channel keys) are encrypted with a key derived from a passphrase via
scrypt (memory-hard).  Public fields stay readable so tooling can show
who a keystore belongs to without the passphrase.  File permissions are
restricted to the owner.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

from . import crypto, wire
from .crypto import Certificate, KeyPair
from .errors import AuthError, ValidationError

KEYSTORE_VERSION = 1
SCRYPT_N = 2**14
SCRYPT_R = 8
SCRYPT_P = 1
_SALT_LEN = 16
_NONCE_LEN = 12


def _derive_key(passphrase: str, salt: bytes, n: int, r: int, p: int) -> bytes:
    if not passphrase:
        raise ValidationError("a passphrase is required to persist a keystore")
    return hashlib.scrypt(
        passphrase.encode("utf-8"), salt=salt, n=n, r=r, p=p, maxmem=128 * 1024 * 1024, dklen=32
    )


@dataclass
class ClientKeystore:
    """In-memory wallet; ``path`` is None for ephemeral keystores."""

    username: str
    home_node_address: str
    keypair: KeyPair
    certificate: Optional[Certificate] = None
    channel_keys: Dict[str, bytes] = field(default_factory=dict)
    channel_names: Dict[str, str] = field(default_factory=dict)
    path: Optional[Path] = None
    passphrase: Optional[str] = None

    @classmethod
    def create(
        cls,
        node_address: str,
        username: str,
        path: Optional[Path] = None,
        passphrase: Optional[str] = None,
    ) -> "ClientKeystore":
        crypto.validate_username(username)
        if not node_address:
            raise ValidationError("node address must be non-empty")
        ks = cls(
            username=username,
            home_node_address=node_address,
            keypair=crypto.generate_keypair(),
            path=Path(path) if path else None,
            passphrase=passphrase,
        )
        if ks.path is not None:
            ks.save()
        return ks

    def save(self) -> None:
        if self.path is None:
            return
        if self.passphrase is None:
            raise ValidationError("a passphrase is required to persist a keystore")
        salt = os.urandom(_SALT_LEN)
        key = _derive_key(self.passphrase, salt, SCRYPT_N, SCRYPT_R, SCRYPT_P)
        secrets = {
            "private_key": wire.b64e(self.keypair.private_key),
            "channel_keys": {
                cid: {
                    "key": wire.b64e(k),
                    "name": self.channel_names.get(cid),
                }
                for cid, k in self.channel_keys.items()
            },
        }
        nonce = os.urandom(_NONCE_LEN)
        from cryptography.hazmat.primitives.ciphers.aead import AESGCM

        sealed = nonce + AESGCM(key).encrypt(nonce, wire.canonical_json(secrets), None)
        payload = {
            "version": KEYSTORE_VERSION,
            "username": self.username,
            "home_node_address": self.home_node_address,
            "public_key": wire.b64e(self.keypair.public_key),
            "certificate": wire.cert_to_wire(self.certificate)
            if self.certificate
            else None,
            "kdf": {
                "name": "scrypt",
                "n": SCRYPT_N,
                "r": SCRYPT_R,
                "p": SCRYPT_P,
                "salt": wire.b64e(salt),
            },
            "sealed_secrets": wire.b64e(sealed),
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_bytes(wire.canonical_json(payload))
        tmp.chmod(0o600)
        tmp.replace(self.path)

    @classmethod
    def load(cls, path: Path, passphrase: str) -> "ClientKeystore":
        path = Path(path)
        try:
            payload = json.loads(path.read_bytes())
        except (OSError, ValueError) as e:
            raise ValidationError("cannot read keystore %s: %s" % (path, e)) from None
        if payload.get("version") != KEYSTORE_VERSION:
            raise ValidationError("unsupported keystore version")
        kdf = payload.get("kdf") or {}
        if kdf.get("name") != "scrypt":
            raise ValidationError("unsupported keystore KDF")
        key = _derive_key(
            passphrase, wire.b64d(kdf["salt"]), int(kdf["n"]), int(kdf["r"]), int(kdf["p"])
        )
        sealed = wire.b64d(payload["sealed_secrets"])
        from cryptography.exceptions import InvalidTag
        from cryptography.hazmat.primitives.ciphers.aead import AESGCM

        try:
            raw = AESGCM(key).decrypt(sealed[:_NONCE_LEN], sealed[_NONCE_LEN:], None)
        except InvalidTag:
            raise AuthError("wrong passphrase or corrupted keystore") from None
        secrets = json.loads(raw)
        cert_obj = payload.get("certificate")
        channel_keys: Dict[str, bytes] = {}
        channel_names: Dict[str, str] = {}
        for cid, entry in (secrets.get("channel_keys") or {}).items():
            channel_keys[cid] = wire.b64d(entry["key"])
            if entry.get("name"):
                channel_names[cid] = entry["name"]
        ks = cls(
            username=payload["username"],
            home_node_address=payload["home_node_address"],
            keypair=KeyPair(
                public_key=wire.b64d(payload["public_key"]),
                private_key=wire.b64d(secrets["private_key"]),
            ),
            certificate=wire.cert_from_wire(cert_obj) if cert_obj else None,
            channel_keys=channel_keys,
            channel_names=channel_names,
            path=path,
            passphrase=passphrase,
        )
        return ks

    def require_certificate(self) -> Certificate:
        if self.certificate is None:
            raise ValidationError("keystore is not registered yet; run register first")
        return self.certificate

    def require_channel_key(self, channel_id: str) -> bytes:
        key = self.channel_keys.get(channel_id)
        if key is None:
            raise ValidationError(
                "no channel key cached for %s; fetch the channel key first" % channel_id
            )
        return key

    def store_channel_key(
        self, channel_id: str, key: bytes, name: Optional[str] = None
    ) -> None:
        if len(key) != crypto.CHANNEL_KEY_LEN:
            raise ValidationError("channel key must be 32 bytes")
        self.channel_keys[channel_id] = key
        if name:
            self.channel_names[channel_id] = name
        if self.path is not None:
            self.save()

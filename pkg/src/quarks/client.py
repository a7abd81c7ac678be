"""Client library: the user side of the protocol.

The only place plaintext and channel secrets ever exist.  Every request
is a signed, nonce-carrying envelope; message text is encrypted with the
channel secret before it leaves this process, and channel secrets travel
only sealed to a member's public key.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional

import requests

from . import crypto, wire
from .errors import NetworkError, QuarksError, ValidationError, error_from_code
from .keystore import ClientKeystore

CONNECT_TIMEOUT = 3.0
READ_TIMEOUT = 60.0
PLAINTEXT_LIMIT = 60 * 1024

# Tap callbacks receive (method, url, body_bytes) for every request the
# client sends; the confidentiality tests capture traffic through this.
_taps: List[Callable[[str, str, bytes], None]] = []
_taps_lock = threading.Lock()


def add_tap(fn: Callable[[str, str, bytes], None]) -> None:
    with _taps_lock:
        _taps.append(fn)


def remove_tap(fn: Callable[[str, str, bytes], None]) -> None:
    with _taps_lock:
        if fn in _taps:
            _taps.remove(fn)


def _record(method: str, url: str, body: bytes) -> None:
    with _taps_lock:
        taps = list(_taps)
    for fn in taps:
        fn(method, url, body)


@dataclass(frozen=True)
class DecryptedMessage:
    channel_id: str
    key: str
    ledger_timestamp: int
    sender_username: str
    sent_at_client: int
    text: str


@dataclass(frozen=True)
class UndecryptableMessage:
    channel_id: str
    key: str
    ledger_timestamp: int
    error: str


@dataclass(frozen=True)
class ReadResult:
    messages: List[DecryptedMessage]
    failures: List[UndecryptableMessage]

    @property
    def last_key_ts(self) -> Optional[int]:
        entries = [m.ledger_timestamp for m in self.messages] + [
            f.ledger_timestamp for f in self.failures
        ]
        return max(entries) if entries else None


class QuarksClient:
    """Operations against the user's home node, serialized per keystore."""

    def __init__(self, keystore: ClientKeystore):
        self.keystore = keystore
        self._session = requests.Session()
        self._lock = threading.RLock()

    def close(self) -> None:
        self._session.close()

    # -- transport ----------------------------------------------------------

    def _url(self, path: str) -> str:
        return "http://%s%s" % (self.keystore.home_node_address, path)

    def _post(self, path: str, envelope: dict) -> dict:
        url = self._url(path)
        body = json.dumps(envelope).encode("utf-8")
        _record("POST", url, body)
        try:
            resp = self._session.post(
                url,
                data=body,
                headers={"Content-Type": "application/json"},
                timeout=(CONNECT_TIMEOUT, READ_TIMEOUT),
            )
        except requests.RequestException as e:
            raise NetworkError("node unreachable: %s" % e) from None
        return _decode(resp)

    def _get(self, path: str, headers: Optional[dict] = None) -> dict:
        url = self._url(path)
        _record("GET", url, b"")
        try:
            resp = self._session.get(
                url, headers=headers or {}, timeout=(CONNECT_TIMEOUT, READ_TIMEOUT)
            )
        except requests.RequestException as e:
            raise NetworkError("node unreachable: %s" % e) from None
        return _decode(resp)

    def _signed_post(self, path: str, body: dict) -> dict:
        env = wire.build_envelope(
            self.keystore.keypair.private_key,
            self.keystore.certificate,
            body,
        )
        return self._post(path, env)

    # -- operations -----------------------------------------------------------

    def register(self) -> None:
        """Client side of the registration phase: submit the public key
        and a signature proving possession of the private key."""
        with self._lock:
            if self.keystore.certificate is not None:
                raise ValidationError("keystore already holds a certificate")
            body = {
                "username": self.keystore.username,
                "public_key": wire.b64e(self.keystore.keypair.public_key),
            }
            env = wire.build_envelope(self.keystore.keypair.private_key, None, body)
            resp = self._post("/register", env)
            cert = wire.cert_from_wire(resp.get("certificate"))
            if cert.username != self.keystore.username:
                raise ValidationError("node returned a certificate for another user")
            if cert.public_key != self.keystore.keypair.public_key:
                raise ValidationError("node returned a certificate for another key")
            self.keystore.certificate = cert
            if self.keystore.path is not None:
                self.keystore.save()

    def create_channel(self, channel_name: str) -> str:
        """Generate the channel secret locally, seal it to our own key,
        and ask the home node to open the channel ledger."""
        with self._lock:
            cert = self.keystore.require_certificate()
            secret = crypto.generate_channel_secret()
            sealed = crypto.seal_to_public_key(self.keystore.keypair.public_key, secret)
            body = {"channel_name": channel_name, "sealed_key": wire.b64e(sealed)}
            self._signed_post("/channels", body)
            channel_id = wire.derive_channel_id(cert, channel_name)
            self.keystore.store_channel_key(channel_id, secret, channel_name)
            return channel_id

    def add_node(self, channel_id: str, new_node_address: str) -> None:
        with self._lock:
            self.keystore.require_certificate()
            body = {"channel": channel_id, "new_node_address": new_node_address}
            self._signed_post("/channels/%s/nodes" % channel_id, body)

    def add_member(self, channel_id: str, username: str, node_address: str) -> None:
        """Two-step member addition: fetch the member's public key, then
        seal the channel secret to it and submit."""
        with self._lock:
            self.keystore.require_certificate()
            secret = self.keystore.require_channel_key(channel_id)
            step1 = {
                "channel": channel_id,
                "username": username,
                "node_address": node_address,
            }
            resp = self._signed_post("/channels/%s/members" % channel_id, step1)
            member_cert = wire.cert_from_wire(resp.get("certificate"))
            public_key = wire.b64d(resp.get("public_key"))
            if member_cert.public_key != public_key:
                raise ValidationError("node returned an inconsistent member key")
            sealed = crypto.seal_to_public_key(public_key, secret)
            step2 = {
                "channel": channel_id,
                "username": username,
                "node_address": node_address,
                "sealed_key": wire.b64e(sealed),
                "member_digest": member_cert.digest().hex(),
            }
            self._signed_post("/channels/%s/members" % channel_id, step2)

    def get_channel_key(self, channel_id: str) -> None:
        """Retrieve our sealed channel secret and open it locally."""
        with self._lock:
            self.keystore.require_certificate()
            body = {"channel": channel_id}
            resp = self._signed_post("/channels/%s/key" % channel_id, body)
            sealed = wire.b64d(resp.get("sealed_key"))
            secret = crypto.open_with_private_key(
                self.keystore.keypair.private_key, sealed
            )
            if len(secret) != crypto.CHANNEL_KEY_LEN:
                raise ValidationError("channel secret has the wrong size")
            self.keystore.store_channel_key(channel_id, secret)

    def send(self, channel_id: str, text: str) -> None:
        """Encrypt and submit one message."""
        with self._lock:
            self.keystore.require_certificate()
            if not isinstance(text, str) or not text:
                raise ValidationError("message text must be a non-empty string")
            if len(text.encode("utf-8")) > PLAINTEXT_LIMIT:
                raise ValidationError("message exceeds %d bytes" % PLAINTEXT_LIMIT)
            secret = self.keystore.require_channel_key(channel_id)
            payload = wire.canonical_json(
                {
                    "sender_username": self.keystore.username,
                    "sent_at_client": int(time.time() * 1000),
                    "text": text,
                }
            )
            ciphertext = crypto.encrypt_message(secret, payload)
            body = {"channel": channel_id, "message": wire.b64e(ciphertext)}
            self._signed_post("/channels/%s/messages" % channel_id, body)

    def read(self, channel_id: str, since_ts: int = 0) -> ReadResult:
        """Fetch and decrypt messages with ledger key >= since_ts.

        Entries that fail authenticated decryption are reported in
        ``failures``, never silently dropped.
        """
        with self._lock:
            cert = self.keystore.require_certificate()
            secret = self.keystore.require_channel_key(channel_id)
            if since_ts < 0:
                raise ValidationError("since_ts must be non-negative")
            body = {"channel": channel_id, "ts": since_ts}
            nonce = crypto.fresh_nonce()
            signature = crypto.sign(
                self.keystore.keypair.private_key, wire.signing_bytes(nonce, body)
            )
            headers = {
                "X-Quarks-Nonce": wire.b64e(nonce),
                "X-Quarks-Certificate": wire.b64e(
                    wire.canonical_json(wire.cert_to_wire(cert))
                ),
                "X-Quarks-Signature": wire.b64e(signature),
            }
            resp = self._get(
                "/channels/%s/messages?ts=%d" % (channel_id, since_ts), headers
            )
        messages: List[DecryptedMessage] = []
        failures: List[UndecryptableMessage] = []
        for entry in resp.get("messages", []):
            key = entry.get("key", "")
            ts = int(entry.get("ts", 0))
            try:
                plaintext = crypto.decrypt_message(secret, wire.b64d(entry.get("message")))
                payload = json.loads(plaintext)
                messages.append(
                    DecryptedMessage(
                        channel_id=channel_id,
                        key=key,
                        ledger_timestamp=ts,
                        sender_username=str(payload.get("sender_username", "")),
                        sent_at_client=int(payload.get("sent_at_client", 0)),
                        text=str(payload.get("text", "")),
                    )
                )
            except (QuarksError, ValueError) as e:
                failures.append(
                    UndecryptableMessage(
                        channel_id=channel_id, key=key, ledger_timestamp=ts, error=str(e)
                    )
                )
        return ReadResult(messages=messages, failures=failures)

    def watch(
        self,
        channel_id: str,
        interval: float = 2.0,
        on_batch: Optional[Callable[[ReadResult], None]] = None,
        stop: Optional[threading.Event] = None,
        since_ts: int = 0,
    ) -> None:
        """Poll for new messages until ``stop`` is set."""
        next_ts = since_ts
        while stop is None or not stop.is_set():
            result = self.read(channel_id, next_ts)
            last = result.last_key_ts
            if last is not None:
                next_ts = last + 1
            if on_batch is not None and (result.messages or result.failures):
                on_batch(result)
            if stop is not None:
                if stop.wait(interval):
                    break
            else:
                time.sleep(interval)


def keygen_and_register(
    node_address: str,
    username: str,
    path: Optional[Path] = None,
    passphrase: Optional[str] = None,
) -> ClientKeystore:
    """Generate keys, register at the node, persist the keystore."""
    ks = ClientKeystore.create(node_address, username, path=path, passphrase=passphrase)
    client = QuarksClient(ks)
    try:
        client.register()
    finally:
        client.close()
    return ks


def _decode(resp: requests.Response) -> dict:
    try:
        obj = resp.json()
    except ValueError:
        raise NetworkError("node returned non-JSON (%d)" % resp.status_code) from None
    if resp.status_code >= 400:
        err = obj.get("error") if isinstance(obj, dict) else None
        if isinstance(err, dict):
            raise error_from_code(err.get("code", "error"), err.get("message", ""))
        raise NetworkError("node returned %d" % resp.status_code)
    if not isinstance(obj, dict):
        raise NetworkError("node returned a non-object")
    return obj

"""Wire format shared by nodes, clients, and the browser UI.

Every protocol message is a JSON envelope carrying a fresh nonce, the
sender's certificate, an operation-specific body, and a signature over
(nonce, canonical body).  Byte fields travel base64-encoded.  Canonical
JSON (sorted keys, compact separators, ASCII-escaped) makes the signed
bytes reproducible across implementations.
"""

from __future__ import annotations

import base64
import json
from typing import Any, Optional

from . import crypto
from .crypto import Certificate
from .errors import AuthError, ValidationError


def b64e(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64d(value: Any) -> bytes:
    if not isinstance(value, str):
        raise ValidationError("expected base64 string")
    try:
        return base64.b64decode(value.encode("ascii"), validate=True)
    except Exception:
        raise ValidationError("invalid base64") from None


def canonical_json(obj: Any) -> bytes:
    """Deterministic JSON bytes: sorted keys, no whitespace, ASCII only.

    Floats are rejected; every numeric field in the protocol is an
    integer so both sides serialize identically.
    """
    _reject_floats(obj)
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True
    ).encode("ascii")


def _reject_floats(obj: Any) -> None:
    if isinstance(obj, float):
        raise ValidationError("floats are not allowed in canonical JSON")
    if isinstance(obj, dict):
        for k, v in obj.items():
            if not isinstance(k, str):
                raise ValidationError("canonical JSON keys must be strings")
            _reject_floats(v)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _reject_floats(v)


def cert_to_wire(cert: Certificate) -> dict:
    return {
        "username": cert.username,
        "node_address": cert.node_address,
        "public_key": b64e(cert.public_key),
        "issued_at": cert.issued_at,
        "signature": b64e(cert.signature),
    }


def cert_from_wire(obj: Any) -> Certificate:
    if not isinstance(obj, dict):
        raise ValidationError("certificate must be an object")
    try:
        username = obj["username"]
        node_address = obj["node_address"]
        issued_at = obj["issued_at"]
    except KeyError as e:
        raise ValidationError("certificate missing field %s" % e) from None
    if not isinstance(username, str) or not isinstance(node_address, str):
        raise ValidationError("certificate fields must be strings")
    if not isinstance(issued_at, int) or isinstance(issued_at, bool) or issued_at < 0:
        raise ValidationError("issued_at must be a non-negative integer")
    return Certificate(
        username=username,
        node_address=node_address,
        public_key=b64d(obj.get("public_key")),
        issued_at=issued_at,
        signature=b64d(obj.get("signature")),
    )


def signing_bytes(nonce: bytes, body: dict) -> bytes:
    """The exact bytes covered by an envelope signature."""
    return crypto.lp_join(nonce, canonical_json(body))


def build_envelope(
    private_key: bytes,
    sender_certificate: Optional[Certificate],
    body: dict,
    nonce: Optional[bytes] = None,
) -> dict:
    nonce = nonce if nonce is not None else crypto.fresh_nonce()
    signature = crypto.sign(private_key, signing_bytes(nonce, body))
    return {
        "nonce": b64e(nonce),
        "sender_certificate": cert_to_wire(sender_certificate)
        if sender_certificate
        else None,
        "body": body,
        "signature": b64e(signature),
    }


class ParsedEnvelope:
    """Envelope fields after structural validation, before authentication."""

    __slots__ = ("nonce", "sender_certificate", "body", "signature")

    def __init__(
        self,
        nonce: bytes,
        sender_certificate: Optional[Certificate],
        body: dict,
        signature: bytes,
    ):
        self.nonce = nonce
        self.sender_certificate = sender_certificate
        self.body = body
        self.signature = signature

    def verify_signature(self, public_key: bytes) -> None:
        if not crypto.verify(
            public_key, signing_bytes(self.nonce, self.body), self.signature
        ):
            raise AuthError("envelope signature does not verify")


def parse_envelope(obj: Any) -> ParsedEnvelope:
    if not isinstance(obj, dict):
        raise ValidationError("envelope must be a JSON object")
    nonce = b64d(obj.get("nonce"))
    if len(nonce) != crypto.NONCE_LEN:
        raise ValidationError("nonce must be %d bytes" % crypto.NONCE_LEN)
    body = obj.get("body")
    if not isinstance(body, dict):
        raise ValidationError("envelope body must be an object")
    cert_obj = obj.get("sender_certificate")
    cert = cert_from_wire(cert_obj) if cert_obj is not None else None
    signature = b64d(obj.get("signature"))
    return ParsedEnvelope(nonce, cert, body, signature)


def derive_channel_id(creator_certificate: Certificate, channel_name: str) -> str:
    """Channel identity: hex(hash(creator cert digest || channel name)).

    Both the creating client and every node derive it independently, so
    same-named channels by different creators coexist.
    """
    if not channel_name:
        raise ValidationError("channel name must be non-empty")
    return crypto.sha256(
        creator_certificate.digest() + channel_name.encode("utf-8")
    ).hex()


def body_str(body: dict, key: str) -> str:
    value = body.get(key)
    if not isinstance(value, str) or not value:
        raise ValidationError("body field %r must be a non-empty string" % key)
    return value


def body_int(body: dict, key: str, minimum: int = 0) -> int:
    value = body.get(key)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ValidationError("body field %r must be an integer >= %d" % (key, minimum))
    return value


def body_bytes(body: dict, key: str) -> bytes:
    return b64d(body.get(key))

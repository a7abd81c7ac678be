"""Channel smart contract: certificate-list ACLs, the sealed-key vault,
and message put/read.

Every function runs against a channel's state store and is guarded by
certificate-set membership: the submitting node must be in the channel's
node set and (for member operations) the submitting user in the user
set.  Write functions execute as ledger transactions and are pure
functions of (prior state, transaction), which is what makes replica
replay deterministic.  Read functions never touch the chain.

As defense in depth beyond the node's request validation, the contract
re-verifies the user's envelope signature carried inside each
transaction before mutating anything.
"""

from __future__ import annotations

import json
from functools import lru_cache
from typing import List, Optional, Tuple

from . import crypto, wire
from .crypto import Certificate
from .errors import (
    AuthError,
    AuthorizationError,
    ConflictError,
    IntegrityError,
    NotFoundError,
    ValidationError,
)
from .ledger import StateEntry, StateStore, Transaction, is_message_key, message_key

KEY_NODES = "acl/nodes"
KEY_USERS = "acl/users"
KEY_CHANNEL_ID = "meta/channel_id"
KEY_CHANNEL_NAME = "meta/channel_name"
VAULT_PREFIX = "sk/"


def vault_key(member: Certificate) -> str:
    return VAULT_PREFIX + member.digest().hex()


def _encode_certs(certs: List[Certificate]) -> bytes:
    ordered = sorted(certs, key=lambda c: c.digest())
    return wire.canonical_json([wire.cert_to_wire(c) for c in ordered])


# ACL guard checks run on every request; the certificate lists are only
# re-encoded when membership changes, so decode results are memoized on
# the raw state bytes.
@lru_cache(maxsize=256)
def _decode_certs_cached(raw: bytes) -> Tuple[Certificate, ...]:
    return tuple(wire.cert_from_wire(o) for o in json.loads(raw))


@lru_cache(maxsize=256)
def _digest_set(raw: bytes) -> frozenset:
    return frozenset(c.digest() for c in _decode_certs_cached(raw))


def _decode_certs(raw: Optional[bytes]) -> List[Certificate]:
    if raw is None:
        return []
    return list(_decode_certs_cached(raw))


def channel_nodes(state: StateStore) -> List[Certificate]:
    return _decode_certs(state.get(KEY_NODES))

def channel_users(state: StateStore) -> List[Certificate]:
    return _decode_certs(state.get(KEY_USERS))


def _in_set(certs: List[Certificate], cert: Certificate) -> bool:
    digest = cert.digest()
    return any(c.digest() == digest for c in certs)


def _member_of(raw: Optional[bytes], cert: Certificate) -> bool:
    if raw is None:
        return False
    return cert.digest() in _digest_set(raw)


def node_authorized(state: StateStore, node_cert: Certificate) -> bool:
    return _member_of(state.get(KEY_NODES), node_cert)


def user_authorized(state: StateStore, user_cert: Certificate) -> bool:
    return _member_of(state.get(KEY_USERS), user_cert)


def check_guards(
    state: StateStore, node_cert: Certificate, member_cert: Certificate
) -> None:
    """The Algorithm-1 guard conjunction; raises instead of silently
    falling through so rejections are observable and testable."""
    if not node_authorized(state, node_cert):
        raise AuthorizationError("submitting node is not authorized for this channel")
    if not user_authorized(state, member_cert):
        raise AuthorizationError("user is not a member of this channel")


def _verify_envelope_binding(
    cert: Certificate, nonce: bytes, body_bytes: bytes, signature: bytes
) -> dict:
    """Re-verify the user's envelope signature recorded in the transaction
    and return the parsed body for payload cross-checks."""
    if not crypto.verify(cert.public_key, crypto.lp_join(nonce, body_bytes), signature):
        raise AuthError("recorded envelope signature does not verify")
    try:
        body = json.loads(body_bytes)
    except Exception:
        raise ValidationError("recorded envelope body is not JSON") from None
    if not isinstance(body, dict):
        raise ValidationError("recorded envelope body must be an object")
    return body


def _require_channel_binding(state: StateStore, body: dict) -> None:
    channel_id = state.get(KEY_CHANNEL_ID)
    claimed = body.get("channel")
    if channel_id is None or claimed != channel_id.decode("ascii"):
        raise AuthorizationError("request is bound to a different channel")


# -- write functions (transaction application) ----------------------------


def apply_transaction(state: StateStore, tx: Transaction) -> None:
    """Apply one committed transaction; dispatch by function name."""
    if tx.function_name == "init":
        _apply_init(state, tx)
    elif tx.function_name == "addNode":
        _apply_add_node(state, tx)
    elif tx.function_name == "addMember":
        _apply_add_member(state, tx)
    elif tx.function_name == "sendMsg":
        _apply_send_msg(state, tx)
    else:
        raise ValidationError("unknown contract function %r" % tx.function_name)


def _tx_args(tx: Transaction, count: int) -> Tuple[bytes, ...]:
    if len(tx.args) != count:
        raise ValidationError(
            "%s expects %d args, got %d" % (tx.function_name, count, len(tx.args))
        )
    return tx.args


def _apply_init(state: StateStore, tx: Transaction) -> None:
    """Genesis: seed the ACLs with the creator and their node, and store
    the creator's sealed channel key."""
    channel_name_raw, sealed_key, body_bytes, signature = _tx_args(tx, 4)
    if KEY_NODES in state:
        raise ConflictError("channel is already initialized")
    creator = tx.submitter_certificate
    node_cert = tx.node_certificate
    # The creating node self-issues its certificate, so it must verify
    # under its own public key; the creator's certificate chains to it.
    if not crypto.verify_certificate(node_cert.public_key, node_cert):
        raise AuthError("creating node certificate does not self-verify")
    if not crypto.verify_certificate(node_cert.public_key, creator):
        raise AuthError("creator certificate was not issued by the creating node")
    body = _verify_envelope_binding(creator, tx.nonce, body_bytes, signature)
    channel_name = channel_name_raw.decode("utf-8")
    if body.get("channel_name") != channel_name:
        raise ValidationError("init body does not match the channel name")
    if wire.b64d(body.get("sealed_key")) != sealed_key:
        raise ValidationError("init body does not match the sealed key")
    channel_id = wire.derive_channel_id(creator, channel_name)
    state.put(KEY_CHANNEL_ID, channel_id.encode("ascii"))
    state.put(KEY_CHANNEL_NAME, channel_name_raw)
    state.put(KEY_NODES, _encode_certs([node_cert]))
    state.put(KEY_USERS, _encode_certs([creator]))
    state.put(vault_key(creator), sealed_key)


def _apply_add_node(state: StateStore, tx: Transaction) -> None:
    """Extend the channel node set (set union, so re-adding is a no-op)."""
    new_node_raw, body_bytes, signature = _tx_args(tx, 3)
    if not node_authorized(state, tx.node_certificate):
        raise AuthorizationError("submitting node is not authorized for this channel")
    body = _verify_envelope_binding(
        tx.submitter_certificate, tx.nonce, body_bytes, signature
    )
    _require_channel_binding(state, body)
    new_node = wire.cert_from_wire(json.loads(new_node_raw))
    if not crypto.verify_certificate(new_node.public_key, new_node):
        raise AuthError("new node certificate does not self-verify")
    nodes = channel_nodes(state)
    if not _in_set(nodes, new_node):
        nodes.append(new_node)
        state.put(KEY_NODES, _encode_certs(nodes))


def _apply_add_member(state: StateStore, tx: Transaction) -> None:
    """Store the sealed channel key for the new member and extend the
    user set so the member passes subsequent guards."""
    new_member_raw, sealed_key, body_bytes, signature = _tx_args(tx, 4)
    check_guards(state, tx.node_certificate, tx.submitter_certificate)
    body = _verify_envelope_binding(
        tx.submitter_certificate, tx.nonce, body_bytes, signature
    )
    _require_channel_binding(state, body)
    new_member = wire.cert_from_wire(json.loads(new_member_raw))
    if body.get("username") != new_member.username:
        raise ValidationError("member certificate does not match the requested username")
    if wire.b64d(body.get("sealed_key")) != sealed_key:
        raise ValidationError("recorded sealed key does not match the request body")
    state.put(vault_key(new_member), sealed_key)
    users = channel_users(state)
    if not _in_set(users, new_member):
        users.append(new_member)
        state.put(KEY_USERS, _encode_certs(users))


def _apply_send_msg(state: StateStore, tx: Transaction) -> None:
    """Store the encrypted message under its nanosecond-timestamp key."""
    ciphertext, body_bytes, signature = _tx_args(tx, 3)
    check_guards(state, tx.node_certificate, tx.submitter_certificate)
    body = _verify_envelope_binding(
        tx.submitter_certificate, tx.nonce, body_bytes, signature
    )
    _require_channel_binding(state, body)
    if wire.b64d(body.get("message")) != ciphertext:
        raise ValidationError("recorded ciphertext does not match the request body")
    if len(ciphertext) > crypto.MESSAGE_LIMIT:
        raise ValidationError("encrypted message exceeds the size limit")
    key = message_key(tx.recorded_at)
    if key in state:
        # Timestamp collision: deterministic tie-break off the tx id.
        key = "%s-%s" % (key, tx.tx_id.hex()[:8])
        if key in state:
            raise IntegrityError("message key collision")
    state.put(key, ciphertext)


# -- read functions (no chain mutation) ------------------------------------


def get_channel_sk(
    state: StateStore,
    node_cert: Certificate,
    member_cert: Certificate,
    nonce: bytes,
    body_bytes: bytes,
    signature: bytes,
) -> bytes:
    """Return the sealed channel key stored for exactly this member."""
    check_guards(state, node_cert, member_cert)
    body = _verify_envelope_binding(member_cert, nonce, body_bytes, signature)
    _require_channel_binding(state, body)
    sealed = state.get(vault_key(member_cert))
    if sealed is None:
        raise NotFoundError("no sealed key stored for this member")
    return sealed


def read_msg(
    state: StateStore,
    node_cert: Certificate,
    member_cert: Certificate,
    nonce: bytes,
    body_bytes: bytes,
    signature: bytes,
    ts: int,
    now_ns: int,
) -> List[StateEntry]:
    """All encrypted messages with key in [ts, now), ascending."""
    check_guards(state, node_cert, member_cert)
    body = _verify_envelope_binding(member_cert, nonce, body_bytes, signature)
    _require_channel_binding(state, body)
    if ts < 0:
        raise ValidationError("ts must be non-negative")
    entries = state.range(message_key(ts), message_key(now_ns))
    return [e for e in entries if is_message_key(e.key)]


def message_ts(key: str) -> int:
    """Recover the nanosecond timestamp from a message state key."""
    return int(key.split("-", 1)[0])

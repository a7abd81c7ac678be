"""The node application: per-node certificate authority, off-chain user
registry, channel hosting, request authentication, and federation.

Transport-independent: every handler takes a parsed JSON object and
returns ``(status, body)``, so the HTTP layer stays a thin router and
tests can drive the node in-process.

Write ordering: the node that creates a channel is its sequencer.  All
mutating channel requests reach the sequencer (other hosting nodes
forward verbatim), which batches validated transactions into blocks and
pushes each block to every other channel node before acknowledging the
writer.  Reads are always served from the local replica.
"""

from __future__ import annotations

import json
import logging
import shutil
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from queue import Empty, Queue
from typing import Dict, List, Optional, Tuple

from .. import contract, crypto, wire
from ..crypto import Certificate, KeyPair
from ..errors import (
    AuthError,
    AuthorizationError,
    ConflictError,
    FederationError,
    GapError,
    NotFoundError,
    QuarksError,
    StateError,
    ValidationError,
)
from ..ledger import (
    Block,
    Ledger,
    block_from_wire,
    block_to_wire,
    make_transaction,
    snapshot_from_wire,
    snapshot_to_wire,
    verify_snapshot,
)
from .peers import PeerClient
from .replay import NonceCache

log = logging.getLogger(__name__)

MAX_BATCH = 50
BATCH_WAIT_SECONDS = 0.1  # upper bound; the sequencer flushes as soon as it is free
SUBMIT_TIMEOUT_SECONDS = 30.0
PENDING_ADD_TTL_SECONDS = 300.0
RETRY_BACKOFF_CAP_SECONDS = 10.0


@dataclass
class UserRecord:
    username: str
    certificate: Certificate
    registered_at: int


@dataclass
class ChannelHost:
    channel_id: str
    channel_name: str
    sequencer_address: str
    ledger: Ledger


class _Submission:
    __slots__ = ("function_name", "args", "submitter", "nonce", "done", "error")

    def __init__(self, function_name, args, submitter, nonce):
        self.function_name = function_name
        self.args = args
        self.submitter = submitter
        self.nonce = nonce
        self.done = threading.Event()
        self.error: Optional[Exception] = None


@dataclass
class _PeerState:
    needs_sync: bool = False
    fail_count: int = 0
    retry_at: float = 0.0


class ChannelSequencer:
    """Single writer for one channel.

    Batches queued submissions into blocks (group commit, bounded by
    MAX_BATCH) and applies them through the contract.  A dedicated
    replicator thread pushes committed blocks to the other channel nodes
    in order; message-only blocks are acknowledged as soon as they
    commit locally (replicas converge within the push pipeline), while
    membership changes wait for the push so federation flows observe
    them immediately.  Unreachable peers are skipped with exponential
    backoff and brought back via snapshot re-sync, so a dead replica
    never stalls writers.
    """

    def __init__(self, core: "NodeCore", host: ChannelHost):
        self._core = core
        self._host = host
        self._queue: Queue[_Submission] = Queue()
        self._repl_queue: Queue = Queue()
        self._stop = threading.Event()
        self._peer_states: Dict[str, _PeerState] = {}
        last = 0
        for block in host.ledger.blocks:
            for tx in block.transactions:
                last = max(last, tx.recorded_at)
        self._last_ts = last
        self._thread = threading.Thread(
            target=self._run, name="sequencer-%s" % host.channel_id[:8], daemon=True
        )
        self._repl_thread = threading.Thread(
            target=self._replicate_loop,
            name="replicator-%s" % host.channel_id[:8],
            daemon=True,
        )
        self._thread.start()
        self._repl_thread.start()

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)
        self._repl_thread.join(timeout=5)

    def submit_and_wait(self, function_name, args, submitter, nonce) -> None:
        item = _Submission(function_name, args, submitter, nonce)
        self._queue.put(item)
        if not item.done.wait(SUBMIT_TIMEOUT_SECONDS):
            raise FederationError("sequencer did not commit within the timeout")
        if item.error is not None:
            raise item.error

    def _next_ts(self) -> int:
        # Strictly increasing per channel so message keys never collide
        # and read order equals commit order.
        ts = max(time.time_ns(), self._last_ts + 1)
        self._last_ts = ts
        return ts

    def _run(self) -> None:
        while not self._stop.is_set():
            try:
                first = self._queue.get(timeout=BATCH_WAIT_SECONDS)
            except Empty:
                continue
            batch = [first]
            while len(batch) < MAX_BATCH:
                try:
                    batch.append(self._queue.get_nowait())
                except Empty:
                    break
            self._commit_batch(batch)

    def _replicate_loop(self) -> None:
        while not self._stop.is_set():
            try:
                block, done = self._repl_queue.get(timeout=BATCH_WAIT_SECONDS)
            except Empty:
                self._retry_pending_syncs()
                continue
            try:
                self._replicate(block)
            finally:
                if done is not None:
                    done.set()

    def _commit_batch(self, batch: List[_Submission]) -> None:
        txs = []
        build_errors: Dict[int, Exception] = {}
        for i, item in enumerate(batch):
            try:
                txs.append(
                    make_transaction(
                        item.function_name,
                        item.args,
                        item.submitter,
                        self._core.certificate,
                        item.nonce,
                        self._next_ts(),
                    )
                )
            except Exception as e:
                build_errors[i] = e
                txs.append(None)
        candidates = [t for t in txs if t is not None]
        block, apply_errors = (None, {})
        if candidates:
            block, apply_errors = self._host.ledger.append_block_applying(candidates)
        # Map apply errors (indexed over candidates) back onto the batch.
        candidate_idx = 0
        for i, item in enumerate(batch):
            if i in build_errors:
                item.error = build_errors[i]
            else:
                err = apply_errors.get(candidate_idx)
                if err is not None:
                    item.error = err
                candidate_idx += 1
        if block is not None:
            membership_change = any(
                tx.function_name in ("addNode", "addMember")
                for tx in block.transactions
            )
            done = threading.Event() if membership_change else None
            self._repl_queue.put((block, done))
            if done is not None:
                done.wait(SUBMIT_TIMEOUT_SECONDS)
        for item in batch:
            item.done.set()

    # -- replication ------------------------------------------------------

    def _peer_addresses(self) -> List[str]:
        nodes = self._host.ledger.read_locked(contract.channel_nodes)
        return [
            c.node_address for c in nodes if c.node_address != self._core.address
        ]

    def _replicate(self, block: Block) -> None:
        for addr in self._peer_addresses():
            self._push_to_peer(addr, block)

    def _retry_pending_syncs(self) -> None:
        now = time.monotonic()
        for addr in self._peer_addresses():
            st = self._peer_states.get(addr)
            if st and st.needs_sync and st.retry_at <= now:
                self._push_to_peer(addr, None)

    def _push_to_peer(self, addr: str, block: Optional[Block]) -> None:
        st = self._peer_states.setdefault(addr, _PeerState())
        now = time.monotonic()
        if st.retry_at > now:
            st.needs_sync = True
            return
        try:
            if st.needs_sync or block is None:
                self._core.push_snapshot_to(addr, self._host)
            else:
                env = self._core.internal_envelope(
                    {
                        "channel": self._host.channel_id,
                        "block": block_to_wire(block),
                    }
                )
                self._core.peers.push_block(addr, env)
            st.needs_sync = False
            st.fail_count = 0
            st.retry_at = 0.0
        except (GapError, NotFoundError):
            # Peer is behind or has no replica yet: full re-sync.
            try:
                self._core.push_snapshot_to(addr, self._host)
                st.needs_sync = False
                st.fail_count = 0
            except QuarksError as e:
                self._mark_failed(st, addr, e)
        except QuarksError as e:
            self._mark_failed(st, addr, e)

    def _mark_failed(self, st: _PeerState, addr: str, err: Exception) -> None:
        st.needs_sync = True
        st.fail_count += 1
        backoff = min(RETRY_BACKOFF_CAP_SECONDS, 0.5 * (2 ** min(st.fail_count, 6)))
        st.retry_at = time.monotonic() + backoff
        log.warning(
            "replication to %s failed (attempt %d): %s", addr, st.fail_count, err
        )


class NodeCore:
    """State and request handlers for one node."""

    def __init__(self, node_address: str, data_dir: Path, peer_client: Optional[PeerClient] = None):
        if not node_address:
            raise ValidationError("node address must be non-empty")
        self.address = node_address
        self.data_dir = Path(data_dir)
        self.peers = peer_client or PeerClient()
        self.replay_cache = NonceCache()
        self._users: Dict[str, UserRecord] = {}
        self._users_lock = threading.Lock()
        self._channels: Dict[str, ChannelHost] = {}
        self._channels_lock = threading.Lock()
        self._sequencers: Dict[str, ChannelSequencer] = {}
        self._node_certs: Dict[str, Certificate] = {}
        self._node_certs_lock = threading.Lock()
        self._pending_adds: Dict[tuple, Tuple[Certificate, float]] = {}
        self._pending_lock = threading.Lock()
        # Serializes replica appends against snapshot installs per channel
        # so a swap never races a block write into the same directory.
        self._mutation_locks: Dict[str, threading.Lock] = {}
        self._verified_certs: set = set()
        self._verified_lock = threading.Lock()
        self._identity_keypair, self.certificate = self._load_or_create_identity()
        self._load_users()
        self._load_channels()

    # -- identity and persistence ------------------------------------------

    def _load_or_create_identity(self) -> Tuple[KeyPair, Certificate]:
        ident_dir = self.data_dir / "identity"
        key_path = ident_dir / "ca_key.json"
        cert_path = ident_dir / "node_cert.json"
        if key_path.exists() and cert_path.exists():
            obj = json.loads(key_path.read_bytes())
            kp = KeyPair(
                public_key=wire.b64d(obj["public_key"]),
                private_key=wire.b64d(obj["private_key"]),
            )
            cert = wire.cert_from_wire(json.loads(cert_path.read_bytes()))
            if cert.node_address != self.address:
                raise ValidationError(
                    "data dir belongs to %s, not %s" % (cert.node_address, self.address)
                )
            return kp, cert
        ident_dir.mkdir(parents=True, exist_ok=True)
        kp = crypto.generate_keypair()
        cert = crypto.issue_certificate(
            kp, self.address, self.address, kp.public_key, int(time.time())
        )
        key_path.write_bytes(
            wire.canonical_json(
                {
                    "public_key": wire.b64e(kp.public_key),
                    "private_key": wire.b64e(kp.private_key),
                }
            )
        )
        key_path.chmod(0o600)
        cert_path.write_bytes(wire.canonical_json(wire.cert_to_wire(cert)))
        return kp, cert

    def _users_dir(self) -> Path:
        return self.data_dir / "users"

    def _load_users(self) -> None:
        d = self._users_dir()
        if not d.exists():
            return
        for path in d.glob("*.json"):
            obj = json.loads(path.read_bytes())
            record = UserRecord(
                username=obj["username"],
                certificate=wire.cert_from_wire(obj["certificate"]),
                registered_at=obj["registered_at"],
            )
            self._users[record.username] = record

    def _persist_user(self, record: UserRecord) -> None:
        d = self._users_dir()
        d.mkdir(parents=True, exist_ok=True)
        payload = {
            "username": record.username,
            "certificate": wire.cert_to_wire(record.certificate),
            "registered_at": record.registered_at,
        }
        (d / ("%s.json" % record.username)).write_bytes(wire.canonical_json(payload))

    def _channels_dir(self) -> Path:
        return self.data_dir / "channels"

    def _channel_dir(self, channel_id: str) -> Path:
        return self._channels_dir() / channel_id

    def _load_channels(self) -> None:
        d = self._channels_dir()
        if not d.exists():
            return
        for meta_path in d.glob("*/meta.json"):
            meta = json.loads(meta_path.read_bytes())
            channel_id = meta["channel_id"]
            ledger = Ledger.load(
                channel_id, meta_path.parent, contract.apply_transaction
            )
            host = ChannelHost(
                channel_id=channel_id,
                channel_name=meta["channel_name"],
                sequencer_address=meta["sequencer_address"],
                ledger=ledger,
            )
            self._channels[channel_id] = host
            if host.sequencer_address == self.address:
                self._sequencers[channel_id] = ChannelSequencer(self, host)

    def _persist_channel_meta(self, host: ChannelHost) -> None:
        d = self._channel_dir(host.channel_id)
        d.mkdir(parents=True, exist_ok=True)
        (d / "meta.json").write_bytes(
            wire.canonical_json(
                {
                    "channel_id": host.channel_id,
                    "channel_name": host.channel_name,
                    "sequencer_address": host.sequencer_address,
                }
            )
        )

    def close(self) -> None:
        for seq in list(self._sequencers.values()):
            seq.stop()
        with self._channels_lock:
            for host in self._channels.values():
                host.ledger.write_state_cache()
        self.peers.close()

    # -- authentication ------------------------------------------------------

    def resolve_node_certificate(self, address: str) -> Certificate:
        """Certificate (and thus CA public key) of a node, by address."""
        if address == self.address:
            return self.certificate
        with self._node_certs_lock:
            cached = self._node_certs.get(address)
        if cached is not None:
            return cached
        cert = self.peers.fetch_node_certificate(address)
        if cert.node_address != address or cert.username != address:
            raise AuthError("node certificate does not match its address")
        if not crypto.verify_certificate(cert.public_key, cert):
            raise AuthError("node certificate does not self-verify")
        with self._node_certs_lock:
            self._node_certs[address] = cert
        return cert

    def verify_user_certificate(self, cert: Certificate) -> None:
        # Chain checks run on every request; a certificate that verified
        # once under an issuer key stays valid (no revocation in scope).
        issuer = self.resolve_node_certificate(cert.node_address)
        cache_key = (issuer.public_key, cert.digest())
        with self._verified_lock:
            if cache_key in self._verified_certs:
                return
        if not crypto.verify_certificate(issuer.public_key, cert):
            raise AuthError("certificate was not issued by %s" % cert.node_address)
        with self._verified_lock:
            if len(self._verified_certs) > 4096:
                self._verified_certs.clear()
            self._verified_certs.add(cache_key)

    def authenticate(self, env: wire.ParsedEnvelope) -> Certificate:
        """Full envelope check: certificate chain, signature, replay."""
        cert = env.sender_certificate
        if cert is None:
            raise AuthError("request requires a sender certificate")
        self.verify_user_certificate(cert)
        env.verify_signature(cert.public_key)
        self.replay_cache.check_and_insert(env.nonce)
        return cert

    def _authenticate_internal(self, env: wire.ParsedEnvelope) -> Certificate:
        """Peer push authentication: the sender must present a
        self-verifying node certificate; channel-level authorization is
        checked against the ACL by the caller."""
        cert = env.sender_certificate
        if cert is None:
            raise AuthError("internal request requires a node certificate")
        if cert.username != cert.node_address:
            raise AuthError("internal request requires a node certificate")
        if not crypto.verify_certificate(cert.public_key, cert):
            raise AuthError("node certificate does not self-verify")
        env.verify_signature(cert.public_key)
        self.replay_cache.check_and_insert(env.nonce)
        return cert

    def internal_envelope(self, body: dict) -> dict:
        return wire.build_envelope(
            self._identity_keypair.private_key, self.certificate, body
        )

    # -- channel helpers ------------------------------------------------------

    def _host(self, channel_id: str) -> ChannelHost:
        with self._channels_lock:
            host = self._channels.get(channel_id)
        if host is None:
            raise NotFoundError("channel %s is not hosted on this node" % channel_id)
        return host

    def _mutation_lock(self, channel_id: str) -> threading.Lock:
        with self._channels_lock:
            return self._mutation_locks.setdefault(channel_id, threading.Lock())

    def _require_channel_binding(self, env: wire.ParsedEnvelope, channel_id: str) -> None:
        if env.body.get("channel") != channel_id:
            raise ValidationError("envelope body is bound to a different channel")

    def _is_sequencer(self, host: ChannelHost) -> bool:
        return host.sequencer_address == self.address

    def _forward(self, host: ChannelHost, path: str, raw: dict) -> Tuple[int, dict]:
        return self.peers.forward(host.sequencer_address, path, raw)

    def _submit(self, host, function_name, args, submitter, nonce) -> None:
        seq = self._sequencers.get(host.channel_id)
        if seq is None:
            raise FederationError("this node does not sequence channel %s" % host.channel_id)
        seq.submit_and_wait(function_name, args, submitter, nonce)

    def push_snapshot_to(self, address: str, host: ChannelHost) -> None:
        env = self.internal_envelope(
            {
                "channel_name": host.channel_name,
                "sequencer_address": host.sequencer_address,
                "snapshot": snapshot_to_wire(host.ledger.export_snapshot()),
            }
        )
        self.peers.push_snapshot(address, env)

    # -- request handlers ------------------------------------------------------

    def handle_register(self, obj: dict) -> Tuple[int, dict]:
        env = wire.parse_envelope(obj)
        if env.sender_certificate is not None:
            raise ValidationError("registration must not carry a certificate")
        username = wire.body_str(env.body, "username")
        crypto.validate_username(username)
        public_key = wire.body_bytes(env.body, "public_key")
        if len(public_key) != crypto.PUBLIC_KEY_LEN:
            raise ValidationError("public key must be %d bytes" % crypto.PUBLIC_KEY_LEN)
        env.verify_signature(public_key)
        self.replay_cache.check_and_insert(env.nonce)
        with self._users_lock:
            if username in self._users:
                raise ConflictError("username %r is already registered" % username)
            record = UserRecord(
                username=username,
                certificate=crypto.issue_certificate(
                    self._identity_keypair,
                    username,
                    self.address,
                    public_key,
                    int(time.time()),
                ),
                registered_at=int(time.time()),
            )
            self._users[username] = record
            self._persist_user(record)
        log.info("registered user %s", username)
        return 200, {
            "nonce": wire.b64e(env.nonce),
            "certificate": wire.cert_to_wire(record.certificate),
        }

    def handle_create_channel(self, obj: dict) -> Tuple[int, dict]:
        env = wire.parse_envelope(obj)
        cert = self.authenticate(env)
        channel_name = wire.body_str(env.body, "channel_name")
        sealed_key = wire.body_bytes(env.body, "sealed_key")
        if len(sealed_key) > crypto.SEAL_LIMIT + 128:
            raise ValidationError("sealed key is implausibly large")
        channel_id = wire.derive_channel_id(cert, channel_name)
        with self._channels_lock:
            if channel_id in self._channels:
                raise ConflictError("channel already exists on this node")
        init_tx = make_transaction(
            "init",
            [
                channel_name.encode("utf-8"),
                sealed_key,
                wire.canonical_json(env.body),
                env.signature,
            ],
            cert,
            self.certificate,
            env.nonce,
            time.time_ns(),
        )
        ledger = Ledger.create(
            channel_id,
            [init_tx],
            contract.apply_transaction,
            self._channel_dir(channel_id),
        )
        host = ChannelHost(
            channel_id=channel_id,
            channel_name=channel_name,
            sequencer_address=self.address,
            ledger=ledger,
        )
        with self._channels_lock:
            if channel_id in self._channels:
                raise ConflictError("channel already exists on this node")
            self._channels[channel_id] = host
            self._sequencers[channel_id] = ChannelSequencer(self, host)
        self._persist_channel_meta(host)
        log.info("created channel %s (%s)", channel_id[:12], channel_name)
        return 200, {"nonce": wire.b64e(env.nonce)}

    def handle_add_node(self, channel_id: str, obj: dict) -> Tuple[int, dict]:
        env = wire.parse_envelope(obj)
        cert = self.authenticate(env)
        host = self._host(channel_id)
        self._require_channel_binding(env, channel_id)
        if not self._is_sequencer(host):
            return self._forward(host, "/channels/%s/nodes" % channel_id, obj)
        new_address = wire.body_str(env.body, "new_node_address")
        # Protocol-level membership check: only channel members may federate.
        if not host.ledger.read_locked(
            lambda st: contract.user_authorized(st, cert)
        ):
            raise AuthorizationError("requester is not a member of this channel")
        new_node_cert = self.resolve_node_certificate(new_address)
        args = [
            wire.canonical_json(wire.cert_to_wire(new_node_cert)),
            wire.canonical_json(env.body),
            env.signature,
        ]
        self._submit(host, "addNode", args, cert, env.nonce)
        self.push_snapshot_to(new_address, host)
        log.info("federated channel %s to %s", channel_id[:12], new_address)
        return 200, {"nonce": wire.b64e(env.nonce), "success": True}

    def handle_add_member(self, channel_id: str, obj: dict) -> Tuple[int, dict]:
        env = wire.parse_envelope(obj)
        cert = self.authenticate(env)
        host = self._host(channel_id)
        self._require_channel_binding(env, channel_id)
        if not self._is_sequencer(host):
            return self._forward(host, "/channels/%s/members" % channel_id, obj)
        username = wire.body_str(env.body, "username")
        node_address = wire.body_str(env.body, "node_address")
        if "sealed_key" in env.body:
            return self._add_member_step2(
                host, env, cert, username, node_address
            )
        return self._add_member_step1(host, env, cert, username, node_address)

    def _add_member_step1(
        self, host, env, cert, username, node_address
    ) -> Tuple[int, dict]:
        if not host.ledger.read_locked(
            lambda st: contract.user_authorized(st, cert)
        ):
            raise AuthorizationError("requester is not a member of this channel")
        if node_address == self.address:
            with self._users_lock:
                record = self._users.get(username)
            if record is None:
                raise NotFoundError("user %r is not registered here" % username)
            target = record.certificate
        else:
            target = self.peers.fetch_user_certificate(node_address, username)
            issuer = self.resolve_node_certificate(node_address)
            if not crypto.verify_certificate(issuer.public_key, target):
                raise AuthError("fetched certificate does not chain to its node")
            if target.username != username:
                raise AuthError("fetched certificate names a different user")
        key = (cert.digest().hex(), host.channel_id, username, node_address)
        with self._pending_lock:
            self._pending_adds[key] = (target, time.monotonic() + PENDING_ADD_TTL_SECONDS)
            self._sweep_pending()
        return 200, {
            "nonce": wire.b64e(env.nonce),
            "username": username,
            "public_key": wire.b64e(target.public_key),
            "certificate": wire.cert_to_wire(target),
        }

    def _add_member_step2(
        self, host, env, cert, username, node_address
    ) -> Tuple[int, dict]:
        sealed_key = wire.body_bytes(env.body, "sealed_key")
        member_digest = wire.body_str(env.body, "member_digest")
        key = (cert.digest().hex(), host.channel_id, username, node_address)
        with self._pending_lock:
            entry = self._pending_adds.pop(key, None)
        if entry is None or entry[1] < time.monotonic():
            raise StateError(
                "no pending member addition for %s; request the public key first"
                % username
            )
        target = entry[0]
        if target.digest().hex() != member_digest:
            raise StateError("sealed key is bound to a different certificate")
        args = [
            wire.canonical_json(wire.cert_to_wire(target)),
            sealed_key,
            wire.canonical_json(env.body),
            env.signature,
        ]
        self._submit(host, "addMember", args, cert, env.nonce)
        log.info("added member %s@%s to %s", username, node_address, host.channel_id[:12])
        return 200, {"nonce": wire.b64e(env.nonce), "success": True}

    def _sweep_pending(self) -> None:
        now = time.monotonic()
        stale = [k for k, (_, exp) in self._pending_adds.items() if exp < now]
        for k in stale:
            del self._pending_adds[k]

    def handle_get_key(self, channel_id: str, obj: dict) -> Tuple[int, dict]:
        env = wire.parse_envelope(obj)
        cert = self.authenticate(env)
        host = self._host(channel_id)
        self._require_channel_binding(env, channel_id)
        body_bytes = wire.canonical_json(env.body)
        sealed = host.ledger.read_locked(
            lambda st: contract.get_channel_sk(
                st, self.certificate, cert, env.nonce, body_bytes, env.signature
            )
        )
        return 200, {"nonce": wire.b64e(env.nonce), "sealed_key": wire.b64e(sealed)}

    def handle_send_message(self, channel_id: str, obj: dict) -> Tuple[int, dict]:
        env = wire.parse_envelope(obj)
        cert = self.authenticate(env)
        host = self._host(channel_id)
        self._require_channel_binding(env, channel_id)
        if not self._is_sequencer(host):
            return self._forward(host, "/channels/%s/messages" % channel_id, obj)
        ciphertext = wire.body_bytes(env.body, "message")
        if len(ciphertext) > crypto.MESSAGE_LIMIT:
            raise ValidationError("encrypted message exceeds the size limit")
        # Fast-fail guard against committed state; authoritative check
        # happens again at apply time inside the sequencer.
        host.ledger.read_locked(
            lambda st: contract.check_guards(st, self.certificate, cert)
        )
        args = [ciphertext, wire.canonical_json(env.body), env.signature]
        self._submit(host, "sendMsg", args, cert, env.nonce)
        return 200, {"nonce": wire.b64e(env.nonce), "success": True}

    def handle_read_messages(
        self, channel_id: str, ts: int, headers: dict
    ) -> Tuple[int, dict]:
        env = _envelope_from_headers(headers, {"channel": channel_id, "ts": ts})
        cert = self.authenticate(env)
        host = self._host(channel_id)
        now_ns = time.time_ns()
        body_bytes = wire.canonical_json(env.body)
        entries = host.ledger.read_locked(
            lambda st: contract.read_msg(
                st,
                self.certificate,
                cert,
                env.nonce,
                body_bytes,
                env.signature,
                ts,
                now_ns,
            )
        )
        return 200, {
            "nonce": wire.b64e(env.nonce),
            "messages": [
                {
                    "key": e.key,
                    "ts": contract.message_ts(e.key),
                    "message": wire.b64e(e.value),
                }
                for e in entries
            ],
        }

    def handle_user_certificate(self, username: str) -> Tuple[int, dict]:
        with self._users_lock:
            record = self._users.get(username)
        if record is None:
            raise NotFoundError("user %r is not registered here" % username)
        return 200, {
            "username": username,
            "certificate": wire.cert_to_wire(record.certificate),
        }

    def handle_healthz(self) -> Tuple[int, dict]:
        with self._channels_lock:
            count = len(self._channels)
            channel_ids = sorted(self._channels)
        return 200, {
            "node_address": self.address,
            "certificate": wire.cert_to_wire(self.certificate),
            "channels": count,
            "channel_ids": channel_ids,
        }

    # -- federation handlers ---------------------------------------------------

    def handle_replicate(self, obj: dict) -> Tuple[int, dict]:
        env = wire.parse_envelope(obj)
        cert = self._authenticate_internal(env)
        channel_id = wire.body_str(env.body, "channel")
        block = block_from_wire(env.body.get("block"))
        with self._mutation_lock(channel_id):
            host = self._host(channel_id)
            if not host.ledger.read_locked(
                lambda st: contract.node_authorized(st, cert)
            ):
                raise AuthorizationError("pushing node is not part of this channel")
            local_height = host.ledger.height
            if block.height <= local_height:
                # Duplicate delivery after a retry; already committed.
                return 200, {"nonce": wire.b64e(env.nonce), "height": local_height}
            if block.height > local_height + 1:
                raise GapError(
                    "block %d does not extend local head %d"
                    % (block.height, local_height)
                )
            try:
                host.ledger.append_replica_block(block)
            except QuarksError as e:
                log.error(
                    "rejected invalid replica block for %s: %s", channel_id[:12], e
                )
                raise
            return 200, {"nonce": wire.b64e(env.nonce), "height": host.ledger.height}

    def handle_snapshot(self, obj: dict) -> Tuple[int, dict]:
        env = wire.parse_envelope(obj)
        cert = self._authenticate_internal(env)
        channel_name = wire.body_str(env.body, "channel_name")
        sequencer_address = wire.body_str(env.body, "sequencer_address")
        snapshot = snapshot_from_wire(env.body.get("snapshot"))
        verify_snapshot(snapshot, contract.apply_transaction)
        _check_snapshot_identity(snapshot, channel_name)
        incoming = Ledger.import_snapshot(snapshot, contract.apply_transaction)
        nodes = contract.channel_nodes(incoming.state)
        digests = {c.digest() for c in nodes}
        if cert.digest() not in digests:
            raise AuthorizationError("pushing node is not part of this channel")
        if self.certificate.digest() not in digests:
            raise AuthorizationError("this node has not been added to the channel")
        channel_id = snapshot.channel_id
        with self._mutation_lock(channel_id):
            with self._channels_lock:
                existing = self._channels.get(channel_id)
            if existing is not None:
                if self._is_sequencer(existing):
                    raise ConflictError("sequencer does not accept snapshots")
                if incoming.height < existing.ledger.height or (
                    incoming.height == existing.ledger.height
                    and incoming.head.block_hash == existing.ledger.head.block_hash
                ):
                    return 200, {
                        "nonce": wire.b64e(env.nonce),
                        "height": existing.ledger.height,
                    }
            directory = self._channel_dir(channel_id)
            if directory.exists():
                shutil.rmtree(directory)
            installed = Ledger.import_snapshot(
                snapshot, contract.apply_transaction, directory
            )
            host = ChannelHost(
                channel_id=channel_id,
                channel_name=channel_name,
                sequencer_address=sequencer_address,
                ledger=installed,
            )
            with self._channels_lock:
                self._channels[channel_id] = host
            self._persist_channel_meta(host)
        log.info(
            "installed replica of %s at height %d", channel_id[:12], installed.height
        )
        return 200, {"nonce": wire.b64e(env.nonce), "height": installed.height}


def _check_snapshot_identity(snapshot, channel_name: str) -> None:
    """The channel id must hash out of the genesis creator and name."""
    genesis = snapshot.blocks[0]
    init = next(
        (t for t in genesis.transactions if t.function_name == "init"), None
    )
    if init is None:
        raise ValidationError("snapshot genesis lacks the init transaction")
    declared_name = init.args[0].decode("utf-8")
    if declared_name != channel_name:
        raise ValidationError("snapshot channel name mismatch")
    expected = wire.derive_channel_id(init.submitter_certificate, declared_name)
    if expected != snapshot.channel_id:
        raise ValidationError("snapshot channel id does not match its genesis")


def _envelope_from_headers(headers: dict, body: dict) -> wire.ParsedEnvelope:
    """Authenticated GETs carry the envelope in headers; the signed body
    is reconstructed from the path and query so both sides canonicalize
    the same bytes."""
    lowered = {k.lower(): v for k, v in headers.items()}
    try:
        nonce = wire.b64d(lowered.get("x-quarks-nonce"))
        cert = wire.cert_from_wire(
            json.loads(wire.b64d(lowered.get("x-quarks-certificate")))
        )
        signature = wire.b64d(lowered.get("x-quarks-signature"))
    except (ValidationError, ValueError) as e:
        raise AuthError("missing or malformed authentication headers: %s" % e) from None
    if len(nonce) != crypto.NONCE_LEN:
        raise AuthError("nonce must be %d bytes" % crypto.NONCE_LEN)
    return wire.ParsedEnvelope(nonce, cert, body, signature)

"""Per-channel append-only hash-chained ledger.

Each channel owns one ledger: an ordered list of blocks over a
timestamp-keyed state store.  The state store is a pure function of the
ordered transaction sequence (the contract module supplies the apply
function), so replicas that receive identical blocks end up with
byte-identical state and head hashes.

On disk a ledger is one directory per channel with one canonical-JSON
file per block plus a state-store cache rebuilt on startup by replay.
Block files are loaded under a strict round-trip rule: the parsed block
must re-serialize to exactly the stored bytes, so any single-byte change
to a committed file fails verification.
"""

from __future__ import annotations

import bisect
import json
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Tuple

from . import crypto, wire
from .crypto import Certificate
from .errors import ConflictError, IntegrityError, ValidationError

ZERO_DIGEST = b"\x00" * crypto.DIGEST_LEN

CONTRACT_FUNCTIONS = (
    "init",
    "addNode",
    "addMember",
    "getChannelSK",
    "sendMsg",
    "readMsg",
)

# Functions that may appear in a committed transaction (reads never do).
WRITE_FUNCTIONS = ("init", "addNode", "addMember", "sendMsg")


@dataclass(frozen=True)
class Transaction:
    function_name: str
    args: Tuple[bytes, ...]
    submitter_certificate: Certificate
    node_certificate: Certificate
    nonce: bytes
    recorded_at: int  # nanoseconds, assigned by the sequencer
    tx_id: bytes

    def body_bytes(self) -> bytes:
        return transaction_body(
            self.function_name,
            self.args,
            self.submitter_certificate,
            self.node_certificate,
            self.nonce,
            self.recorded_at,
        )


def transaction_body(
    function_name: str,
    args: Iterable[bytes],
    submitter_certificate: Certificate,
    node_certificate: Certificate,
    nonce: bytes,
    recorded_at: int,
) -> bytes:
    args = tuple(args)
    # The arg count keeps the serialization injective when arity varies.
    return crypto.lp_join(
        function_name.encode("utf-8"),
        struct.pack(">Q", len(args)),
        *args,
        submitter_certificate.serialize(),
        node_certificate.serialize(),
        nonce,
        struct.pack(">Q", recorded_at),
    )


def make_transaction(
    function_name: str,
    args: Iterable[bytes],
    submitter_certificate: Certificate,
    node_certificate: Certificate,
    nonce: bytes,
    recorded_at: int,
) -> Transaction:
    if function_name not in WRITE_FUNCTIONS:
        raise ValidationError("unknown contract write function %r" % function_name)
    if recorded_at < 0:
        raise ValidationError("recorded_at must be non-negative")
    args = tuple(args)
    body = transaction_body(
        function_name, args, submitter_certificate, node_certificate, nonce, recorded_at
    )
    return Transaction(
        function_name=function_name,
        args=args,
        submitter_certificate=submitter_certificate,
        node_certificate=node_certificate,
        nonce=nonce,
        recorded_at=recorded_at,
        tx_id=crypto.sha256(body),
    )


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    transactions: Tuple[Transaction, ...]
    block_hash: bytes


def block_hash_of(height: int, prev_hash: bytes, tx_ids: Iterable[bytes]) -> bytes:
    return crypto.sha256(crypto.lp_join(struct.pack(">Q", height), prev_hash, *tx_ids))


def make_block(height: int, prev_hash: bytes, transactions: Iterable[Transaction]) -> Block:
    transactions = tuple(transactions)
    if not transactions:
        raise ValidationError("a block must contain at least one transaction")
    return Block(
        height=height,
        prev_hash=prev_hash,
        transactions=transactions,
        block_hash=block_hash_of(height, prev_hash, (t.tx_id for t in transactions)),
    )


@dataclass(frozen=True)
class StateEntry:
    key: str
    value: bytes


def is_message_key(key: str) -> bool:
    """Message keys start with a digit (19-digit zero-padded nanoseconds,
    optionally suffixed for timestamp collisions); every other namespace
    is alphabetic, so ranges over digit keys only ever see messages."""
    return key[:1].isdigit()


def message_key(recorded_at: int) -> str:
    return "%019d" % recorded_at


class StateStore:
    """Key/value store with lexicographic half-open range queries.

    Message keys are append-only; ACL and sealed-key entries may be
    overwritten by later transactions.
    """

    def __init__(self):
        self._data: dict[str, bytes] = {}
        self._sorted_keys: List[str] = []

    def put(self, key: str, value: bytes) -> None:
        if key in self._data:
            if is_message_key(key):
                raise IntegrityError("message key %r is append-only" % key)
            self._data[key] = value
            return
        self._data[key] = value
        bisect.insort(self._sorted_keys, key)

    def get(self, key: str) -> Optional[bytes]:
        return self._data.get(key)

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def __len__(self) -> int:
        return len(self._data)

    def range(self, from_key: str, to_key: str) -> List[StateEntry]:
        """All entries with from_key <= key < to_key, ascending."""
        lo = bisect.bisect_left(self._sorted_keys, from_key)
        hi = bisect.bisect_left(self._sorted_keys, to_key)
        return [StateEntry(k, self._data[k]) for k in self._sorted_keys[lo:hi]]

    def items(self) -> List[StateEntry]:
        return [StateEntry(k, self._data[k]) for k in self._sorted_keys]

    def as_dict(self) -> dict[str, bytes]:
        return dict(self._data)


ApplyFn = Callable[[StateStore, Transaction], None]


@dataclass(frozen=True)
class LedgerSnapshot:
    channel_id: str
    blocks: Tuple[Block, ...]


class Ledger:
    """One channel's chain plus its materialized state.

    A single writer (the channel sequencer or the replication receiver)
    appends; readers may query concurrently and observe the last
    committed block.
    """

    def __init__(
        self,
        channel_id: str,
        apply_fn: ApplyFn,
        directory: Optional[Path] = None,
    ):
        if not channel_id:
            raise ValidationError("channel_id must be non-empty")
        self.channel_id = channel_id
        self._apply = apply_fn
        self._directory = Path(directory) if directory else None
        self._blocks: List[Block] = []
        self._state = StateStore()
        self._lock = threading.RLock()

    # -- construction -----------------------------------------------------

    @classmethod
    def create(
        cls,
        channel_id: str,
        genesis_transactions: Iterable[Transaction],
        apply_fn: ApplyFn,
        directory: Optional[Path] = None,
    ) -> "Ledger":
        """New ledger whose genesis block holds the given transactions."""
        txs = tuple(genesis_transactions)
        if not any(t.function_name == "init" for t in txs):
            raise ValidationError("genesis must include the contract init transaction")
        if directory is not None:
            directory = Path(directory)
            if directory.exists() and any(directory.iterdir()):
                raise ConflictError("channel %s already exists on this node" % channel_id)
        ledger = cls(channel_id, apply_fn, directory)
        genesis = make_block(0, ZERO_DIGEST, txs)
        ledger._commit(genesis)
        return ledger

    @classmethod
    def load(cls, channel_id: str, directory: Path, apply_fn: ApplyFn) -> "Ledger":
        """Rebuild a ledger from its block files, verifying as it goes."""
        directory = Path(directory)
        files = sorted(directory.glob("block_*.json"))
        if not files:
            raise IntegrityError("no blocks found in %s" % directory)
        ledger = cls(channel_id, apply_fn, directory)
        for path in files:
            block = load_block_file(path)
            ledger._validate_link(block)
            ledger._apply_block(block)
            ledger._blocks.append(block)
        ledger._write_state_cache()
        return ledger

    @classmethod
    def import_snapshot(
        cls,
        snapshot: LedgerSnapshot,
        apply_fn: ApplyFn,
        directory: Optional[Path] = None,
    ) -> "Ledger":
        """Replica creation from a snapshot; rejects invalid chains."""
        if not snapshot.blocks:
            raise IntegrityError("snapshot has no genesis block")
        ledger = cls(snapshot.channel_id, apply_fn, None)
        for block in snapshot.blocks:
            ledger._validate_link(block)
            try:
                ledger._apply_block(block)
            except Exception as e:
                raise IntegrityError("snapshot replay failed: %s" % e) from None
            ledger._blocks.append(block)
        # Only touch disk once the whole snapshot has verified.
        if directory is not None:
            ledger._directory = Path(directory)
            ledger._directory.mkdir(parents=True, exist_ok=True)
            for block in ledger._blocks:
                ledger._persist_block(block)
            ledger._write_state_cache()
        return ledger

    # -- accessors --------------------------------------------------------

    @property
    def height(self) -> int:
        with self._lock:
            return len(self._blocks) - 1

    @property
    def head(self) -> Block:
        with self._lock:
            return self._blocks[-1]

    @property
    def blocks(self) -> Tuple[Block, ...]:
        with self._lock:
            return tuple(self._blocks)

    @property
    def state(self) -> StateStore:
        return self._state

    def read_locked(self, fn: Callable[[StateStore], object]):
        """Run a read against committed state under the ledger lock."""
        with self._lock:
            return fn(self._state)

    # -- mutation ---------------------------------------------------------

    def append_block(self, transactions: Iterable[Transaction]) -> Block:
        """Commit a new block of already-validated transactions."""
        txs = tuple(transactions)
        if not txs:
            raise ValidationError("cannot append an empty block")
        with self._lock:
            head = self._blocks[-1]
            block = make_block(head.height + 1, head.block_hash, txs)
            self._commit(block)
            return block

    def append_block_applying(
        self, transactions: Iterable[Transaction]
    ) -> Tuple[Optional[Block], dict]:
        """Sequencer commit path: apply candidates in order against live
        state, drop the ones the contract rejects, and commit the
        survivors as one block.

        Contract apply functions validate fully before their first write,
        so a rejected transaction leaves the state untouched.  Returns
        (block or None, {candidate index: error}).
        """
        candidates = tuple(transactions)
        errors: dict[int, Exception] = {}
        with self._lock:
            accepted: List[Transaction] = []
            for i, tx in enumerate(candidates):
                try:
                    self._apply(self._state, tx)
                except Exception as e:  # guard/validation rejection
                    errors[i] = e
                    continue
                accepted.append(tx)
            if not accepted:
                return None, errors
            head = self._blocks[-1]
            block = make_block(head.height + 1, head.block_hash, accepted)
            self._blocks.append(block)
            self._persist_block(block)
            return block, errors

    def append_replica_block(self, block: Block) -> None:
        """Append a block received from the channel sequencer.

        Validates chain linkage and recomputes every hash before applying;
        a block that does not extend the head raises ``IntegrityError``
        with a gap indication handled by the federation layer.
        """
        with self._lock:
            self._validate_link(block)
            self._commit(block)

    def _validate_link(self, block: Block) -> None:
        verify_block_hashes(block)
        expected_height = len(self._blocks)
        if block.height != expected_height:
            raise IntegrityError(
                "block height %d does not extend head %d"
                % (block.height, expected_height - 1)
            )
        expected_prev = ZERO_DIGEST if not self._blocks else self._blocks[-1].block_hash
        if block.prev_hash != expected_prev:
            raise IntegrityError("block prev_hash does not match head")

    def _apply_block(self, block: Block) -> None:
        for tx in block.transactions:
            self._apply(self._state, tx)

    def _commit(self, block: Block) -> None:
        self._apply_block(block)
        self._blocks.append(block)
        self._persist_block(block)

    # -- verification -----------------------------------------------------

    def verify_chain(self) -> bool:
        """Structural chain check plus full deterministic replay."""
        with self._lock:
            blocks = tuple(self._blocks)
            current = self._state.as_dict()
        try:
            replayed = replay_state(blocks, self._apply)
        except Exception:
            return False
        return replayed.as_dict() == current

    def export_snapshot(self) -> LedgerSnapshot:
        with self._lock:
            return LedgerSnapshot(channel_id=self.channel_id, blocks=tuple(self._blocks))

    # -- persistence ------------------------------------------------------

    def _persist_block(self, block: Block) -> None:
        if self._directory is None:
            return
        self._directory.mkdir(parents=True, exist_ok=True)
        path = self._directory / ("block_%010d.json" % block.height)
        path.write_bytes(wire.canonical_json(block_to_wire(block)))

    def _write_state_cache(self) -> None:
        if self._directory is None:
            return
        entries = {e.key: wire.b64e(e.value) for e in self._state.items()}
        path = self._directory / "state.json"
        path.write_bytes(wire.canonical_json({"channel_id": self.channel_id, "state": entries}))

    def write_state_cache(self) -> None:
        with self._lock:
            self._write_state_cache()


def verify_channel_dir(channel_id: str, directory: Path, apply_fn: ApplyFn) -> bool:
    """Operator-facing check: load a persisted channel ledger and verify
    it end to end.  Any unreadable, non-canonical, or tampered block file
    makes this False."""
    try:
        ledger = Ledger.load(channel_id, directory, apply_fn)
    except Exception:
        return False
    return ledger.verify_chain()


def verify_block_hashes(block: Block) -> None:
    """Recompute every transaction id and the block hash."""
    if not block.transactions:
        raise IntegrityError("block has no transactions")
    if block.height == 0 and block.prev_hash != ZERO_DIGEST:
        raise IntegrityError("genesis prev_hash must be the zero digest")
    for tx in block.transactions:
        if tx.function_name not in WRITE_FUNCTIONS:
            raise IntegrityError("transaction function %r is not a write" % tx.function_name)
        if crypto.sha256(tx.body_bytes()) != tx.tx_id:
            raise IntegrityError("transaction id does not match its body")
    expected = block_hash_of(
        block.height, block.prev_hash, (t.tx_id for t in block.transactions)
    )
    if expected != block.block_hash:
        raise IntegrityError("block hash does not match contents")


def verify_snapshot(snapshot: LedgerSnapshot, apply_fn: ApplyFn) -> None:
    if not snapshot.blocks:
        raise IntegrityError("snapshot has no genesis block")
    prev = ZERO_DIGEST
    for i, block in enumerate(snapshot.blocks):
        verify_block_hashes(block)
        if block.height != i:
            raise IntegrityError("snapshot heights are not contiguous")
        if block.prev_hash != prev:
            raise IntegrityError("snapshot chain is broken at height %d" % i)
        prev = block.block_hash
    replay_state(snapshot.blocks, apply_fn)


def replay_state(blocks: Iterable[Block], apply_fn: ApplyFn) -> StateStore:
    state = StateStore()
    for block in blocks:
        for tx in block.transactions:
            apply_fn(state, tx)
    return state


# -- wire / file codecs ---------------------------------------------------


def tx_to_wire(tx: Transaction) -> dict:
    return {
        "tx_id": wire.b64e(tx.tx_id),
        "function": tx.function_name,
        "args": [wire.b64e(a) for a in tx.args],
        "submitter_certificate": wire.cert_to_wire(tx.submitter_certificate),
        "node_certificate": wire.cert_to_wire(tx.node_certificate),
        "nonce": wire.b64e(tx.nonce),
        "recorded_at": tx.recorded_at,
    }


def tx_from_wire(obj: dict) -> Transaction:
    if not isinstance(obj, dict):
        raise ValidationError("transaction must be an object")
    function = obj.get("function")
    if function not in WRITE_FUNCTIONS:
        raise ValidationError("unknown transaction function %r" % function)
    args_obj = obj.get("args")
    if not isinstance(args_obj, list):
        raise ValidationError("transaction args must be a list")
    tx = make_transaction(
        function_name=function,
        args=[wire.b64d(a) for a in args_obj],
        submitter_certificate=wire.cert_from_wire(obj.get("submitter_certificate")),
        node_certificate=wire.cert_from_wire(obj.get("node_certificate")),
        nonce=wire.b64d(obj.get("nonce")),
        recorded_at=wire.body_int(obj, "recorded_at"),
    )
    if tx.tx_id != wire.b64d(obj.get("tx_id")):
        raise IntegrityError("transaction id does not match its body")
    return tx


def block_to_wire(block: Block) -> dict:
    return {
        "height": block.height,
        "prev_hash": wire.b64e(block.prev_hash),
        "transactions": [tx_to_wire(t) for t in block.transactions],
        "block_hash": wire.b64e(block.block_hash),
    }


def block_from_wire(obj: dict) -> Block:
    if not isinstance(obj, dict):
        raise ValidationError("block must be an object")
    txs_obj = obj.get("transactions")
    if not isinstance(txs_obj, list) or not txs_obj:
        raise ValidationError("block transactions must be a non-empty list")
    block = Block(
        height=wire.body_int(obj, "height"),
        prev_hash=wire.b64d(obj.get("prev_hash")),
        transactions=tuple(tx_from_wire(t) for t in txs_obj),
        block_hash=wire.b64d(obj.get("block_hash")),
    )
    verify_block_hashes(block)
    return block


def load_block_file(path: Path) -> Block:
    """Load one block file, enforcing canonical round-trip equality so any
    byte-level edit to the file is detected."""
    raw = Path(path).read_bytes()
    try:
        obj = json.loads(raw)
        block = block_from_wire(obj)
    except IntegrityError:
        raise
    except Exception as e:
        raise IntegrityError("unreadable block file %s: %s" % (path, e)) from None
    if wire.canonical_json(block_to_wire(block)) != raw:
        raise IntegrityError("block file %s is not in canonical form" % path)
    return block


def snapshot_to_wire(snapshot: LedgerSnapshot) -> dict:
    return {
        "channel_id": snapshot.channel_id,
        "blocks": [block_to_wire(b) for b in snapshot.blocks],
    }


def snapshot_from_wire(obj: dict) -> LedgerSnapshot:
    if not isinstance(obj, dict):
        raise ValidationError("snapshot must be an object")
    blocks_obj = obj.get("blocks")
    if not isinstance(blocks_obj, list):
        raise ValidationError("snapshot blocks must be a list")
    return LedgerSnapshot(
        channel_id=wire.body_str(obj, "channel_id"),
        blocks=tuple(block_from_wire(b) for b in blocks_obj),
    )

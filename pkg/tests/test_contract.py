import time

import pytest

from quarks import contract, crypto
from quarks.errors import (
    AuthError,
    AuthorizationError,
    ConflictError,
    NotFoundError,
    ValidationError,
)


def read_all(ch, keypair, cert, ts=0, node_cert=None):
    body = {"channel": ch.channel_id, "ts": ts}
    nonce, body_bytes, sig = ch.signed_body(keypair, body)
    return contract.read_msg(
        ch.ledger.state,
        node_cert or ch.node_cert,
        cert,
        nonce,
        body_bytes,
        sig,
        ts,
        time.time_ns(),
    )


def get_sk(ch, keypair, cert, node_cert=None):
    body = {"channel": ch.channel_id}
    nonce, body_bytes, sig = ch.signed_body(keypair, body)
    return contract.get_channel_sk(
        ch.ledger.state, node_cert or ch.node_cert, cert, nonce, body_bytes, sig
    )


def enroll(ch, username):
    """Creator adds a fresh member through the real addMember path."""
    kp, cert = ch.new_user(username)
    sealed = crypto.seal_to_public_key(kp.public_key, ch.secret)
    ch.ledger.append_block([ch.add_member_tx(ch.creator_kp, ch.creator_cert, cert, sealed)])
    return kp, cert


class TestInit:
    def test_creator_can_get_sealed_key(self, channel):
        sealed = get_sk(channel, channel.creator_kp, channel.creator_cert)
        opened = crypto.open_with_private_key(channel.creator_kp.private_key, sealed)
        assert opened == channel.secret

    def test_genesis_acl_is_exactly_creator_and_node(self, channel):
        nodes = contract.channel_nodes(channel.ledger.state)
        users = contract.channel_users(channel.ledger.state)
        assert [c.digest() for c in nodes] == [channel.node_cert.digest()]
        assert [c.digest() for c in users] == [channel.creator_cert.digest()]

    def test_replayed_init_rejected(self, channel):
        with pytest.raises(ConflictError):
            contract.apply_transaction(channel.ledger.state, channel.init_tx)


class TestAddNode:
    def test_union_semantics(self, channel):
        kp2 = crypto.generate_keypair()
        node2 = crypto.issue_certificate(kp2, "node-b:1", "node-b:1", kp2.public_key, 1)
        channel.ledger.append_block(
            [channel.add_node_tx(channel.creator_kp, channel.creator_cert, node2)]
        )
        digests = {c.digest() for c in contract.channel_nodes(channel.ledger.state)}
        assert digests == {channel.node_cert.digest(), node2.digest()}

    def test_idempotent_re_add(self, channel):
        kp2 = crypto.generate_keypair()
        node2 = crypto.issue_certificate(kp2, "node-b:1", "node-b:1", kp2.public_key, 1)
        for _ in range(2):
            channel.ledger.append_block(
                [channel.add_node_tx(channel.creator_kp, channel.creator_cert, node2)]
            )
        assert len(contract.channel_nodes(channel.ledger.state)) == 2

    def test_unauthorized_submitting_node_rejected(self, channel):
        rogue_kp = crypto.generate_keypair()
        rogue = crypto.issue_certificate(rogue_kp, "rogue:1", "rogue:1", rogue_kp.public_key, 1)
        tx = channel.add_node_tx(
            channel.creator_kp, channel.creator_cert, rogue, node_cert=rogue
        )
        with pytest.raises(AuthorizationError):
            contract.apply_transaction(channel.ledger.state, tx)
        assert len(contract.channel_nodes(channel.ledger.state)) == 1


class TestAddMember:
    def test_member_can_fetch_key_after_addition(self, channel):
        kp_b, cert_b = enroll(channel, "bob")
        sealed = get_sk(channel, kp_b, cert_b)
        assert crypto.open_with_private_key(kp_b.private_key, sealed) == channel.secret

    def test_non_member_cannot_add(self, channel):
        kp_c, cert_c = channel.new_user("carol")
        kp_d, cert_d = channel.new_user("dave")
        sealed = crypto.seal_to_public_key(kp_d.public_key, channel.secret)
        tx = channel.add_member_tx(kp_c, cert_c, cert_d, sealed)
        with pytest.raises(AuthorizationError):
            contract.apply_transaction(channel.ledger.state, tx)
        assert len(contract.channel_users(channel.ledger.state)) == 1

    def test_unauthorized_node_rejected_even_with_valid_member(self, channel):
        rogue_kp = crypto.generate_keypair()
        rogue = crypto.issue_certificate(rogue_kp, "rogue:1", "rogue:1", rogue_kp.public_key, 1)
        kp_b, cert_b = channel.new_user("bob")
        sealed = crypto.seal_to_public_key(kp_b.public_key, channel.secret)
        tx = channel.add_member_tx(
            channel.creator_kp, channel.creator_cert, cert_b, sealed, node_cert=rogue
        )
        with pytest.raises(AuthorizationError):
            contract.apply_transaction(channel.ledger.state, tx)

    def test_member_cannot_open_anothers_sealed_blob(self, channel):
        kp_b, cert_b = enroll(channel, "bob")
        creator_sealed = get_sk(channel, channel.creator_kp, channel.creator_cert)
        with pytest.raises(AuthError):
            crypto.open_with_private_key(kp_b.private_key, creator_sealed)


class TestGetChannelSK:
    def test_non_member_rejected(self, channel):
        kp_c, cert_c = channel.new_user("carol")
        with pytest.raises(AuthorizationError):
            get_sk(channel, kp_c, cert_c)

    def test_member_without_vault_entry_not_found(self, channel):
        # White box: force a user into ChUsers without a sealed key.
        kp_x, cert_x = channel.new_user("xavier")
        state = channel.ledger.state
        users = contract.channel_users(state) + [cert_x]
        state.put(contract.KEY_USERS, contract._encode_certs(users))
        with pytest.raises(NotFoundError):
            get_sk(channel, kp_x, cert_x)

    def test_read_only(self, channel):
        head = channel.ledger.head.block_hash
        get_sk(channel, channel.creator_kp, channel.creator_cert)
        assert channel.ledger.head.block_hash == head


class TestSendAndRead:
    def test_send_then_read(self, channel):
        ct = crypto.encrypt_message(channel.secret, b"hello")
        channel.ledger.append_block(
            [channel.send_tx(channel.creator_kp, channel.creator_cert, ct)]
        )
        entries = read_all(channel, channel.creator_kp, channel.creator_cert)
        assert [e.value for e in entries] == [ct]

    def test_read_order_equals_commit_order(self, channel):
        # Oracle: the sequencer commit order is the append order here.
        cts = [crypto.encrypt_message(channel.secret, b"m%d" % i) for i in range(5)]
        for ct in cts:
            channel.ledger.append_block(
                [channel.send_tx(channel.creator_kp, channel.creator_cert, ct)]
            )
        entries = read_all(channel, channel.creator_kp, channel.creator_cert)
        assert [e.value for e in entries] == cts
        assert len({e.key for e in entries}) == 5

    def test_fresh_channel_reads_empty(self, channel):
        assert read_all(channel, channel.creator_kp, channel.creator_cert) == []

    def test_ts_past_end_reads_empty(self, channel):
        # Oracle: brute-force filter of the stored message list.
        ct = crypto.encrypt_message(channel.secret, b"hello")
        channel.ledger.append_block(
            [channel.send_tx(channel.creator_kp, channel.creator_cert, ct)]
        )
        entries = read_all(channel, channel.creator_kp, channel.creator_cert)
        last_ts = contract.message_ts(entries[0].key)
        oracle = [e for e in entries if contract.message_ts(e.key) >= last_ts + 1]
        assert oracle == []
        assert read_all(
            channel, channel.creator_kp, channel.creator_cert, ts=last_ts + 1
        ) == []

    def test_non_member_send_rejected_and_absent(self, channel):
        kp_c, cert_c = channel.new_user("carol")
        ct = crypto.encrypt_message(channel.secret, b"intruder")
        with pytest.raises(AuthorizationError):
            contract.apply_transaction(
                channel.ledger.state, channel.send_tx(kp_c, cert_c, ct)
            )
        assert read_all(channel, channel.creator_kp, channel.creator_cert) == []

    def test_oversize_message_rejected(self, channel):
        fake_ct = b"\x00" * (64 * 1024 + 1)
        tx = channel.send_tx(channel.creator_kp, channel.creator_cert, fake_ct)
        with pytest.raises(ValidationError):
            contract.apply_transaction(channel.ledger.state, tx)

    def test_read_leaves_head_unchanged(self, channel):
        head = channel.ledger.head.block_hash
        read_all(channel, channel.creator_kp, channel.creator_cert)
        assert channel.ledger.head.block_hash == head


class TestEnvelopeBindingInContract:
    def test_recorded_signature_must_verify(self, channel):
        ct = crypto.encrypt_message(channel.secret, b"x")
        tx = channel.send_tx(channel.creator_kp, channel.creator_cert, ct)
        forged = tx.args[:2] + (b"\x00" * 64,)
        from quarks.ledger import make_transaction

        bad = make_transaction(
            "sendMsg", forged, tx.submitter_certificate, tx.node_certificate,
            tx.nonce, tx.recorded_at + 1,
        )
        with pytest.raises(AuthError):
            contract.apply_transaction(channel.ledger.state, bad)

    def test_ciphertext_must_match_signed_body(self, channel):
        ct = crypto.encrypt_message(channel.secret, b"x")
        other = crypto.encrypt_message(channel.secret, b"y")
        tx = channel.send_tx(channel.creator_kp, channel.creator_cert, ct)
        from quarks.ledger import make_transaction

        swapped = make_transaction(
            "sendMsg",
            (other,) + tx.args[1:],
            tx.submitter_certificate,
            tx.node_certificate,
            tx.nonce,
            tx.recorded_at + 1,
        )
        with pytest.raises(ValidationError):
            contract.apply_transaction(channel.ledger.state, swapped)

    def test_cross_channel_replay_rejected(self, channel):
        from tests.conftest import ChannelFixture

        other = ChannelFixture()
        ct = crypto.encrypt_message(channel.secret, b"x")
        tx = channel.send_tx(channel.creator_kp, channel.creator_cert, ct)
        # Same creator keys do not exist in `other`, but even a tx whose
        # signed body names channel A must not apply to channel B.
        with pytest.raises((AuthorizationError, AuthError)):
            contract.apply_transaction(other.ledger.state, tx)


class TestGuardCombinations:
    """Contract-level sweep of the guard conjunction for the four
    member-guarded functions (the full fifteen-case sweep including
    addNode runs through the node layer in the acceptance suite)."""

    @pytest.fixture
    def rogue_node(self):
        kp = crypto.generate_keypair()
        return crypto.issue_certificate(kp, "rogue:1", "rogue:1", kp.public_key, 1)

    @pytest.fixture
    def outsider(self, channel):
        return channel.new_user("carol")

    def test_all_guarded_writes_reject_all_bad_combos(self, channel, rogue_node, outsider):
        kp_c, cert_c = outsider
        kp_b, cert_b = channel.new_user("bob")
        sealed = crypto.seal_to_public_key(kp_b.public_key, channel.secret)
        ct = crypto.encrypt_message(channel.secret, b"z")
        head = channel.ledger.head.block_hash
        combos = [
            (channel.creator_kp, channel.creator_cert, rogue_node),  # node bad
            (kp_c, cert_c, channel.node_cert),  # user bad
            (kp_c, cert_c, rogue_node),  # both bad
        ]
        for kp, cert, node_cert in combos:
            with pytest.raises(AuthorizationError):
                contract.apply_transaction(
                    channel.ledger.state,
                    channel.send_tx(kp, cert, ct, node_cert=node_cert),
                )
            with pytest.raises(AuthorizationError):
                contract.apply_transaction(
                    channel.ledger.state,
                    channel.add_member_tx(kp, cert, cert_b, sealed, node_cert=node_cert),
                )
            with pytest.raises(AuthorizationError):
                get_sk(channel, kp, cert, node_cert=node_cert)
            with pytest.raises(AuthorizationError):
                read_all(channel, kp, cert, node_cert=node_cert)
        assert channel.ledger.head.block_hash == head

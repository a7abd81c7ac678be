import logging
import time

import pytest

from quarks import contract, crypto, wire
from quarks.client import QuarksClient, keygen_and_register
from quarks.harness.network import spawn_network
from quarks.ledger import Ledger, make_transaction

logging.getLogger("quarks").setLevel(logging.WARNING)
logging.getLogger("urllib3").setLevel(logging.ERROR)


@pytest.fixture
def one_node(tmp_path):
    net = spawn_network(1, base_dir=tmp_path / "net", channel_name="main")
    yield net
    net.stop()


@pytest.fixture
def two_nodes(tmp_path):
    net = spawn_network(2, base_dir=tmp_path / "net", channel_name="main")
    yield net
    net.stop()


@pytest.fixture
def three_nodes(tmp_path):
    net = spawn_network(3, base_dir=tmp_path / "net", channel_name="main")
    yield net
    net.stop()


def make_user(network, username, node_index=0):
    """Register a user at a node and return a ready client."""
    node = network.nodes[node_index]
    ks = keygen_and_register(node.address, username)
    return QuarksClient(ks)


def enroll_member(network, admin_client, member_client):
    """Add an already-registered user to the network's shared channel and
    have them fetch the channel key."""
    ks = member_client.keystore
    admin_client.add_member(
        network.channel_id, ks.username, ks.home_node_address
    )
    member_client.get_channel_key(network.channel_id)


class ChannelFixture:
    """A contract-level channel: certificates, keys, and a ledger, without
    any node or HTTP involved."""

    def __init__(self):
        self.node_kp = crypto.generate_keypair()
        self.node_cert = crypto.issue_certificate(
            self.node_kp, "node-a:1", "node-a:1", self.node_kp.public_key, 1000
        )
        self.creator_kp = crypto.generate_keypair()
        self.creator_cert = crypto.issue_certificate(
            self.node_kp, "alice", "node-a:1", self.creator_kp.public_key, 1001
        )
        self.secret = crypto.generate_channel_secret()
        self.channel_name = "general"
        self.channel_id = wire.derive_channel_id(self.creator_cert, self.channel_name)
        sealed = crypto.seal_to_public_key(self.creator_kp.public_key, self.secret)
        body = {"channel_name": self.channel_name, "sealed_key": wire.b64e(sealed)}
        nonce = crypto.fresh_nonce()
        sig = crypto.sign(self.creator_kp.private_key, wire.signing_bytes(nonce, body))
        self.init_tx = make_transaction(
            "init",
            [
                self.channel_name.encode("utf-8"),
                sealed,
                wire.canonical_json(body),
                sig,
            ],
            self.creator_cert,
            self.node_cert,
            nonce,
            time.time_ns(),
        )
        self.ledger = Ledger.create(
            self.channel_id, [self.init_tx], contract.apply_transaction
        )
        self._ts = self.init_tx.recorded_at

    def next_ts(self) -> int:
        self._ts = max(time.time_ns(), self._ts + 1)
        return self._ts

    def new_user(self, username, keypair=None):
        kp = keypair or crypto.generate_keypair()
        cert = crypto.issue_certificate(
            self.node_kp, username, "node-a:1", kp.public_key, 1002
        )
        return kp, cert

    def signed_body(self, keypair, body):
        nonce = crypto.fresh_nonce()
        sig = crypto.sign(keypair.private_key, wire.signing_bytes(nonce, body))
        return nonce, wire.canonical_json(body), sig

    def send_tx(self, keypair, cert, ciphertext, node_cert=None):
        body = {"channel": self.channel_id, "message": wire.b64e(ciphertext)}
        nonce, body_bytes, sig = self.signed_body(keypair, body)
        return make_transaction(
            "sendMsg",
            [ciphertext, body_bytes, sig],
            cert,
            node_cert or self.node_cert,
            nonce,
            self.next_ts(),
        )

    def add_member_tx(self, keypair, cert, new_cert, sealed, node_cert=None):
        body = {
            "channel": self.channel_id,
            "username": new_cert.username,
            "node_address": new_cert.node_address,
            "sealed_key": wire.b64e(sealed),
        }
        nonce, body_bytes, sig = self.signed_body(keypair, body)
        return make_transaction(
            "addMember",
            [
                wire.canonical_json(wire.cert_to_wire(new_cert)),
                sealed,
                body_bytes,
                sig,
            ],
            cert,
            node_cert or self.node_cert,
            nonce,
            self.next_ts(),
        )

    def add_node_tx(self, keypair, cert, new_node_cert, node_cert=None):
        body = {
            "channel": self.channel_id,
            "new_node_address": new_node_cert.node_address,
        }
        nonce, body_bytes, sig = self.signed_body(keypair, body)
        return make_transaction(
            "addNode",
            [wire.canonical_json(wire.cert_to_wire(new_node_cert)), body_bytes, sig],
            cert,
            node_cert or self.node_cert,
            nonce,
            self.next_ts(),
        )


@pytest.fixture
def channel():
    return ChannelFixture()

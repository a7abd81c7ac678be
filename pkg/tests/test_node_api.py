"""HTTP-level behavior of a node: registration, channel creation,
envelope authentication, replay rejection, and certificate serving."""

import json

import pytest
import requests

from quarks import crypto, wire
from quarks.client import QuarksClient, keygen_and_register
from quarks.errors import ConflictError, NotFoundError
from quarks.keystore import ClientKeystore

from tests.conftest import make_user


def post(address, path, payload):
    return requests.post(
        "http://%s%s" % (address, path), json=payload, timeout=10
    )


def register_envelope(username, keypair):
    body = {"username": username, "public_key": wire.b64e(keypair.public_key)}
    return wire.build_envelope(keypair.private_key, None, body)


class TestRegistration:
    def test_register_issues_certificate(self, one_node):
        addr = one_node.nodes[0].address
        kp = crypto.generate_keypair()
        resp = post(addr, "/register", register_envelope("alice", kp))
        assert resp.status_code == 200
        cert = wire.cert_from_wire(resp.json()["certificate"])
        assert cert.username == "alice"
        assert cert.node_address == addr
        node_cert = wire.cert_from_wire(one_node.healthz(0)["certificate"])
        assert crypto.verify_certificate(node_cert.public_key, cert)

    def test_duplicate_username_conflicts(self, one_node):
        addr = one_node.nodes[0].address
        kp = crypto.generate_keypair()
        assert post(addr, "/register", register_envelope("alice", kp)).status_code == 200
        resp = post(addr, "/register", register_envelope("alice", crypto.generate_keypair()))
        assert resp.status_code == 409
        assert resp.json()["error"]["code"] == "conflict"

    def test_bad_signature_rejected(self, one_node):
        addr = one_node.nodes[0].address
        kp = crypto.generate_keypair()
        env = register_envelope("mallory", kp)
        env["body"]["username"] = "other"
        resp = post(addr, "/register", env)
        assert resp.status_code == 401
        assert post(addr, "/users/other/certificate", {}).status_code == 404

    def test_replayed_envelope_rejected(self, one_node):
        addr = one_node.nodes[0].address
        env = register_envelope("alice", crypto.generate_keypair())
        assert post(addr, "/register", env).status_code == 200
        resp = post(addr, "/register", env)
        assert resp.status_code == 409
        assert resp.json()["error"]["code"] == "replay"


class TestChannelCreation:
    def test_create_and_fetch_key(self, one_node):
        alice = make_user(one_node, "alice")
        channel_id = alice.create_channel("general")
        secret = alice.keystore.channel_keys[channel_id]
        alice.keystore.channel_keys.clear()
        alice.get_channel_key(channel_id)
        assert alice.keystore.channel_keys[channel_id] == secret
        alice.close()

    def test_invalid_signature_creates_nothing(self, one_node):
        alice = make_user(one_node, "alice")
        addr = one_node.nodes[0].address
        body = {"channel_name": "ghost", "sealed_key": wire.b64e(b"x" * 76)}
        env = wire.build_envelope(
            alice.keystore.keypair.private_key, alice.keystore.certificate, body
        )
        env["body"]["channel_name"] = "ghost2"
        resp = post(addr, "/channels", env)
        assert resp.status_code == 401
        assert one_node.healthz(0)["channels"] == 1  # only the fixture channel
        alice.close()

    def test_same_name_different_creators_coexist(self, one_node):
        # Oracle: the id derivation rule itself.
        alice = make_user(one_node, "alice")
        bob = make_user(one_node, "bob")
        id_a = alice.create_channel("general")
        id_b = bob.create_channel("general")
        assert id_a != id_b
        assert id_a == wire.derive_channel_id(alice.keystore.certificate, "general")
        assert id_b == wire.derive_channel_id(bob.keystore.certificate, "general")
        alice.close()
        bob.close()

    def test_duplicate_channel_conflicts(self, one_node):
        alice = make_user(one_node, "alice")
        alice.create_channel("general")
        with pytest.raises(ConflictError):
            alice.create_channel("general")
        alice.close()


class TestAuthenticationDiscipline:
    def test_tampered_mutating_request_changes_nothing(self, one_node):
        alice = make_user(one_node, "alice")
        channel_id = alice.create_channel("general")
        node = one_node.nodes[0].server.core
        head_before = node._host(channel_id).ledger.head.block_hash
        ct = crypto.encrypt_message(alice.keystore.channel_keys[channel_id], b"{}")
        body = {"channel": channel_id, "message": wire.b64e(ct)}
        env = wire.build_envelope(
            alice.keystore.keypair.private_key, alice.keystore.certificate, body
        )
        env["signature"] = wire.b64e(b"\x00" * 64)
        resp = post(one_node.nodes[0].address, "/channels/%s/messages" % channel_id, env)
        assert resp.status_code == 401
        assert node._host(channel_id).ledger.head.block_hash == head_before
        alice.close()

    def test_unknown_channel_404(self, one_node):
        alice = make_user(one_node, "alice")
        with pytest.raises(NotFoundError):
            alice.get_channel_key("0" * 64)
        alice.close()

    def test_non_member_key_fetch_403(self, one_node):
        alice = make_user(one_node, "alice")
        carol = make_user(one_node, "carol")
        channel_id = alice.create_channel("general")
        resp_body = {"channel": channel_id}
        env = wire.build_envelope(
            carol.keystore.keypair.private_key, carol.keystore.certificate, resp_body
        )
        resp = post(one_node.nodes[0].address, "/channels/%s/key" % channel_id, env)
        assert resp.status_code == 403
        assert resp.json()["error"]["code"] == "authorization"
        alice.close()
        carol.close()

    def test_unknown_endpoint_404(self, one_node):
        assert post(one_node.nodes[0].address, "/nope", {}).status_code == 404
        assert requests.get(
            "http://%s/channels" % one_node.nodes[0].address, timeout=5
        ).status_code == 404


class TestCertificateServing:
    def test_local_user_served(self, one_node):
        alice = make_user(one_node, "alice")
        addr = one_node.nodes[0].address
        resp = requests.get("http://%s/users/alice/certificate" % addr, timeout=5)
        assert resp.status_code == 200
        cert = wire.cert_from_wire(resp.json()["certificate"])
        assert cert == alice.keystore.certificate
        alice.close()

    def test_unknown_user_404(self, one_node):
        addr = one_node.nodes[0].address
        resp = requests.get("http://%s/users/ghost/certificate" % addr, timeout=5)
        assert resp.status_code == 404

    def test_remote_fetch_matches_home_registry(self, two_nodes):
        # Oracle: direct read of the home node's registry.
        bob = make_user(two_nodes, "bob", node_index=1)
        core0 = two_nodes.nodes[0].server.core
        fetched = core0.peers.fetch_user_certificate(
            two_nodes.nodes[1].address, "bob"
        )
        stored = two_nodes.nodes[1].server.core._users["bob"].certificate
        assert fetched.serialize() == stored.serialize()
        bob.close()


class TestHealthz:
    def test_shape(self, one_node):
        info = one_node.healthz(0)
        assert info["node_address"] == one_node.nodes[0].address
        assert info["channels"] == 1
        cert = wire.cert_from_wire(info["certificate"])
        assert crypto.verify_certificate(cert.public_key, cert)


class TestReadEndpoint:
    def test_read_requires_headers(self, one_node):
        alice = make_user(one_node, "alice")
        channel_id = alice.create_channel("general")
        resp = requests.get(
            "http://%s/channels/%s/messages?ts=0"
            % (one_node.nodes[0].address, channel_id),
            timeout=5,
        )
        assert resp.status_code == 401
        alice.close()

    def test_read_rejects_query_mismatch_with_signature(self, one_node):
        alice = make_user(one_node, "alice")
        ks = alice.keystore
        channel_id = alice.create_channel("general")
        body = {"channel": channel_id, "ts": 0}
        nonce = crypto.fresh_nonce()
        sig = crypto.sign(ks.keypair.private_key, wire.signing_bytes(nonce, body))
        headers = {
            "X-Quarks-Nonce": wire.b64e(nonce),
            "X-Quarks-Certificate": wire.b64e(
                wire.canonical_json(wire.cert_to_wire(ks.certificate))
            ),
            "X-Quarks-Signature": wire.b64e(sig),
        }
        # Signature covers ts=0 but the query claims ts=5.
        resp = requests.get(
            "http://%s/channels/%s/messages?ts=5"
            % (one_node.nodes[0].address, channel_id),
            headers=headers,
            timeout=5,
        )
        assert resp.status_code == 401
        alice.close()


class TestReplayOnReads:
    def test_captured_read_request_cannot_be_replayed(self, one_node):
        alice = make_user(one_node, "alice")
        ks = alice.keystore
        channel_id = alice.create_channel("general")
        body = {"channel": channel_id, "ts": 0}
        nonce = crypto.fresh_nonce()
        sig = crypto.sign(ks.keypair.private_key, wire.signing_bytes(nonce, body))
        headers = {
            "X-Quarks-Nonce": wire.b64e(nonce),
            "X-Quarks-Certificate": wire.b64e(
                wire.canonical_json(wire.cert_to_wire(ks.certificate))
            ),
            "X-Quarks-Signature": wire.b64e(sig),
        }
        url = "http://%s/channels/%s/messages?ts=0" % (
            one_node.nodes[0].address,
            channel_id,
        )
        assert requests.get(url, headers=headers, timeout=5).status_code == 200
        replayed = requests.get(url, headers=headers, timeout=5)
        assert replayed.status_code == 409
        assert replayed.json()["error"]["code"] == "replay"
        alice.close()


class TestRestartPersistence:
    def test_node_reloads_channels_and_keeps_sequencing(self, tmp_path):
        from quarks.node.http import NodeServer

        server = NodeServer(tmp_path / "node")
        server.start()
        address = server.address
        port = int(address.rsplit(":", 1)[1])
        alice = make_user_at(address)
        channel_id = alice.create_channel("general")
        alice.send(channel_id, "before restart")
        alice.close()
        server.stop()

        revived = NodeServer(tmp_path / "node", port=port)
        revived.start()
        try:
            assert revived.address == address
            alice2 = QuarksClient(
                ClientKeystore(
                    username=alice.keystore.username,
                    home_node_address=address,
                    keypair=alice.keystore.keypair,
                    certificate=alice.keystore.certificate,
                    channel_keys=dict(alice.keystore.channel_keys),
                )
            )
            result = alice2.read(channel_id, 0)
            assert [m.text for m in result.messages] == ["before restart"]
            alice2.send(channel_id, "after restart")
            result = alice2.read(channel_id, 0)
            assert [m.text for m in result.messages] == [
                "before restart",
                "after restart",
            ]
            host = revived.core._host(channel_id)
            assert host.ledger.verify_chain()
            alice2.close()
        finally:
            revived.stop()


def make_user_at(address):
    ks = keygen_and_register(address, "alice")
    return QuarksClient(ks)

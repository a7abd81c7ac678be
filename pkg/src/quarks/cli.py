"""quarks: the user-facing command line client.

Exit codes: 0 success, 2 validation, 3 auth/authorization, 4 not found,
5 network.  ``--json`` switches every command to machine-readable output
for the harness and web UI parity tests.
"""

from __future__ import annotations

import argparse
import getpass
import json
import os
import sys
import threading
from dataclasses import asdict
from pathlib import Path

from .client import QuarksClient, ReadResult
from .errors import QuarksError, ValidationError
from .keystore import ClientKeystore


def _emit(args, payload: dict, human: str = "") -> None:
    if args.json:
        print(json.dumps(payload))
    elif human:
        print(human)


def _passphrase(args, confirm: bool = False) -> str:
    if args.passphrase:
        return args.passphrase
    env = os.environ.get("QUARKS_PASSPHRASE")
    if env:
        return env
    phrase = getpass.getpass("keystore passphrase: ")
    if confirm:
        again = getpass.getpass("repeat passphrase: ")
        if phrase != again:
            raise ValidationError("passphrases do not match")
    return phrase


def _load_keystore(args) -> ClientKeystore:
    if not args.keystore:
        raise ValidationError("--keystore is required")
    return ClientKeystore.load(Path(args.keystore), _passphrase(args))


def cmd_keygen(args) -> None:
    ks = ClientKeystore.create(
        args.node, args.username, path=Path(args.keystore), passphrase=_passphrase(args, confirm=True)
    )
    _emit(
        args,
        {"username": ks.username, "node": ks.home_node_address, "keystore": str(ks.path)},
        "created keystore for %s at %s" % (ks.username, ks.path),
    )


def cmd_register(args) -> None:
    ks = _load_keystore(args)
    client = QuarksClient(ks)
    try:
        client.register()
    finally:
        client.close()
    _emit(
        args,
        {"username": ks.username, "node": ks.home_node_address},
        "registered %s at %s" % (ks.username, ks.home_node_address),
    )


def cmd_channel_create(args) -> None:
    ks = _load_keystore(args)
    client = QuarksClient(ks)
    try:
        channel_id = client.create_channel(args.name)
    finally:
        client.close()
    _emit(args, {"channel_id": channel_id}, channel_id)


def cmd_channel_add_node(args) -> None:
    ks = _load_keystore(args)
    client = QuarksClient(ks)
    try:
        client.add_node(args.channel, args.address)
    finally:
        client.close()
    _emit(args, {"ok": True}, "node %s added to channel" % args.address)


def cmd_channel_add_member(args) -> None:
    ks = _load_keystore(args)
    client = QuarksClient(ks)
    try:
        client.add_member(args.channel, args.username, args.user_node)
    finally:
        client.close()
    _emit(args, {"ok": True}, "member %s added to channel" % args.username)


def cmd_key_fetch(args) -> None:
    ks = _load_keystore(args)
    client = QuarksClient(ks)
    try:
        client.get_channel_key(args.channel)
    finally:
        client.close()
    _emit(args, {"ok": True}, "channel key cached")


def cmd_send(args) -> None:
    ks = _load_keystore(args)
    text = args.text if args.text is not None else sys.stdin.read().rstrip("\n")
    client = QuarksClient(ks)
    try:
        client.send(args.channel, text)
    finally:
        client.close()
    _emit(args, {"ok": True}, "sent")


def _render_read(args, result: ReadResult) -> None:
    if args.json:
        print(
            json.dumps(
                {
                    "messages": [asdict(m) for m in result.messages],
                    "failures": [asdict(f) for f in result.failures],
                }
            )
        )
        return
    for m in result.messages:
        print("[%d] %s: %s" % (m.ledger_timestamp, m.sender_username, m.text))
    for f in result.failures:
        print("[%d] <undecryptable: %s>" % (f.ledger_timestamp, f.error))


def cmd_read(args) -> None:
    ks = _load_keystore(args)
    client = QuarksClient(ks)
    try:
        result = client.read(args.channel, args.since)
    finally:
        client.close()
    _render_read(args, result)


def cmd_watch(args) -> None:
    ks = _load_keystore(args)
    client = QuarksClient(ks)
    stop = threading.Event()
    try:
        client.watch(
            args.channel,
            interval=args.interval,
            on_batch=lambda result: _render_read(args, result),
            stop=stop,
            since_ts=args.since,
        )
    except KeyboardInterrupt:
        pass
    finally:
        client.close()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quarks", description="Quarks messaging client")
    parser.add_argument("--keystore", help="path to the keystore file")
    parser.add_argument("--passphrase", help="keystore passphrase (or QUARKS_PASSPHRASE)")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate keys and create a keystore")
    p.add_argument("--node", required=True, help="home node host:port")
    p.add_argument("--username", required=True)
    p.set_defaults(fn=cmd_keygen)

    p = sub.add_parser("register", help="register the keystore's user at its node")
    p.set_defaults(fn=cmd_register)

    channel = sub.add_parser("channel", help="channel management")
    channel_sub = channel.add_subparsers(dest="channel_command", required=True)

    p = channel_sub.add_parser("create", help="create a channel")
    p.add_argument("--name", required=True)
    p.set_defaults(fn=cmd_channel_create)

    p = channel_sub.add_parser("add-node", help="federate another node into a channel")
    p.add_argument("--channel", required=True)
    p.add_argument("--address", required=True, help="new node host:port")
    p.set_defaults(fn=cmd_channel_add_node)

    p = channel_sub.add_parser("add-member", help="add a user to a channel")
    p.add_argument("--channel", required=True)
    p.add_argument("--username", required=True)
    p.add_argument("--user-node", required=True, help="the user's home node host:port")
    p.set_defaults(fn=cmd_channel_add_member)

    key = sub.add_parser("key", help="channel key operations")
    key_sub = key.add_subparsers(dest="key_command", required=True)
    p = key_sub.add_parser("fetch", help="fetch and open this member's channel key")
    p.add_argument("--channel", required=True)
    p.set_defaults(fn=cmd_key_fetch)

    p = sub.add_parser("send", help="send a message")
    p.add_argument("--channel", required=True)
    p.add_argument("--text", help="message text (stdin when omitted)")
    p.set_defaults(fn=cmd_send)

    p = sub.add_parser("read", help="read messages")
    p.add_argument("--channel", required=True)
    p.add_argument("--since", type=int, default=0, help="ledger timestamp lower bound")
    p.set_defaults(fn=cmd_read)

    p = sub.add_parser("watch", help="poll for new messages")
    p.add_argument("--channel", required=True)
    p.add_argument("--interval", type=float, default=2.0)
    p.add_argument("--since", type=int, default=0)
    p.set_defaults(fn=cmd_watch)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except QuarksError as e:
        if args.json:
            print(json.dumps({"error": {"code": e.code, "message": e.message}}))
        else:
            print("error (%s): %s" % (e.code, e.message), file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

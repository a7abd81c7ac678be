"""quarksd: the node daemon entry point.

Usage: quarksd --address host:port --data-dir path [--peers addr,addr]
[--config file].  The config file is key=value lines whose values
override the flags.  Logs are structured JSON on stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import time
from pathlib import Path

from .http import NodeServer


class JsonLogFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(record.created)),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry)


def setup_logging(level: int = logging.INFO) -> None:
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(JsonLogFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


def load_config(path: Path) -> dict:
    """key=value lines; blank lines and # comments ignored."""
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError("%s:%d: expected key=value" % (path, lineno))
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip().strip('"')
    return values


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError("address must be host:port, got %r" % address)
    return host, int(port)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="quarksd", description="Quarks node daemon")
    parser.add_argument("--address", default="127.0.0.1:7801", help="host:port to bind")
    parser.add_argument("--data-dir", default="./quarks-data", help="node state directory")
    parser.add_argument("--peers", default="", help="comma-separated peer addresses")
    parser.add_argument("--config", default=None, help="key=value config file overriding flags")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)

    config = load_config(Path(args.config)) if args.config else {}
    address = config.get("address", args.address)
    data_dir = Path(config.get("data_dir", args.data_dir))
    peers = [p for p in config.get("peers", args.peers).split(",") if p]

    setup_logging(logging.DEBUG if args.verbose else logging.INFO)
    log = logging.getLogger("quarksd")

    host, port = parse_address(address)
    server = NodeServer(data_dir, host=host, port=port)

    for peer in peers:
        try:
            server.core.resolve_node_certificate(peer)
        except Exception as e:
            log.warning("peer %s not reachable yet: %s", peer, e)

    stop = {"requested": False}

    def _signal_handler(signum, frame):
        stop["requested"] = True
        server._httpd.shutdown()

    signal.signal(signal.SIGTERM, _signal_handler)
    signal.signal(signal.SIGINT, _signal_handler)

    log.info("quarksd listening on %s (data dir %s)", server.address, data_dir)
    server.start()
    try:
        while not stop["requested"]:
            time.sleep(0.2)
    finally:
        server.stop()
        log.info("quarksd stopped")
    return 0


if __name__ == "__main__":
    sys.exit(main())

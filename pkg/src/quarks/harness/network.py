"""Multi-node test network: spawn nodes, federate one shared channel
across all of them, and tear everything down.

Nodes run in-process by default (fast, CI-friendly, and the node-loss
test can stop one server surgically); subprocess mode runs the real
``quarksd`` daemon for out-of-process runs.
"""

from __future__ import annotations

import logging
import shutil
import socket
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import requests

from ..client import QuarksClient, keygen_and_register
from ..errors import ValidationError
from ..keystore import ClientKeystore
from ..node.http import NodeServer

log = logging.getLogger(__name__)

ADMIN_USERNAME = "bench-admin"


@dataclass
class NetworkNode:
    index: int
    address: str
    data_dir: Path
    server: Optional[NodeServer] = None
    process: Optional[subprocess.Popen] = None
    alive: bool = True


@dataclass
class Network:
    """A running federation with one shared channel."""

    nodes: List[NetworkNode]
    base_dir: Path
    channel_name: str
    channel_id: str = ""
    admin: Optional[ClientKeystore] = None
    _owns_dir: bool = field(default=False, repr=False)

    @property
    def addresses(self) -> List[str]:
        return [n.address for n in self.nodes]

    @property
    def sequencer(self) -> NetworkNode:
        return self.nodes[0]

    def node_for(self, i: int) -> NetworkNode:
        return self.nodes[i % len(self.nodes)]

    def healthz(self, index: int) -> dict:
        resp = requests.get(
            "http://%s/healthz" % self.nodes[index].address, timeout=5
        )
        resp.raise_for_status()
        return resp.json()

    def kill(self, index: int) -> None:
        """Make one node unreachable, simulating node loss."""
        node = self.nodes[index]
        if node.server is not None:
            node.server._httpd.shutdown()
            node.server._httpd.server_close()
            node.server._httpd.close_all_connections()
            # A dead node does nothing in the background either.
            node.server.core.close()
        if node.process is not None:
            node.process.terminate()
            node.process.wait(timeout=10)
        node.alive = False
        log.info("killed node %d (%s)", index, node.address)

    def stop(self) -> None:
        for node in self.nodes:
            if not node.alive:
                continue
            try:
                if node.server is not None:
                    node.server.stop()
                if node.process is not None:
                    node.process.terminate()
                    node.process.wait(timeout=10)
            except Exception:
                log.exception("error stopping node %d", node.index)
            node.alive = False
        if self._owns_dir:
            shutil.rmtree(self.base_dir, ignore_errors=True)

    def __enter__(self) -> "Network":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _wait_healthy(address: str, timeout: float = 15.0) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        try:
            if requests.get("http://%s/healthz" % address, timeout=1).status_code == 200:
                return
        except requests.RequestException:
            pass
        time.sleep(0.05)
    raise ValidationError("node %s did not become healthy" % address)


def spawn_network(
    node_count: int,
    topology: str = "full",
    base_dir: Optional[Path] = None,
    in_process: bool = True,
    channel_name: str = "bench",
) -> Network:
    """Start ``node_count`` nodes and federate one shared channel across
    all of them (registration, channel creation, and node addition are
    replayed exactly as a client would drive them)."""
    if node_count < 1:
        raise ValidationError("node_count must be >= 1")
    if topology != "full":
        raise ValidationError("only the 'full' topology is supported")
    owns_dir = base_dir is None
    base = Path(base_dir) if base_dir else Path(tempfile.mkdtemp(prefix="quarks-net-"))
    nodes: List[NetworkNode] = []
    try:
        for i in range(node_count):
            data_dir = base / ("node%d" % i)
            if in_process:
                server = NodeServer(data_dir).start()
                nodes.append(
                    NetworkNode(index=i, address=server.address, data_dir=data_dir, server=server)
                )
            else:
                port = _free_port()
                address = "127.0.0.1:%d" % port
                proc = subprocess.Popen(
                    [
                        sys.executable,
                        "-m",
                        "quarks.node.daemon",
                        "--address",
                        address,
                        "--data-dir",
                        str(data_dir),
                    ],
                    stdout=subprocess.DEVNULL,
                    stderr=subprocess.DEVNULL,
                )
                nodes.append(
                    NetworkNode(index=i, address=address, data_dir=data_dir, process=proc)
                )
        for node in nodes:
            _wait_healthy(node.address)

        network = Network(
            nodes=nodes, base_dir=base, channel_name=channel_name, _owns_dir=owns_dir
        )
        _setup_channel(network)
        return network
    except Exception:
        for node in nodes:
            try:
                if node.server is not None:
                    node.server.stop()
                if node.process is not None:
                    node.process.terminate()
            except Exception:
                pass
        if owns_dir:
            shutil.rmtree(base, ignore_errors=True)
        raise


def _setup_channel(network: Network) -> None:
    admin = keygen_and_register(network.sequencer.address, ADMIN_USERNAME)
    client = QuarksClient(admin)
    try:
        channel_id = client.create_channel(network.channel_name)
        for node in network.nodes[1:]:
            client.add_node(channel_id, node.address)
    finally:
        client.close()
    network.admin = admin
    network.channel_id = channel_id
    log.info(
        "network ready: %d nodes sharing channel %s", len(network.nodes), channel_id[:12]
    )

"""HTTP front end for the node core.

A threaded stdlib server: one handler thread per connection with
keep-alive, which matches the node's thread-per-request concurrency
model (per-channel writes serialize through the sequencer queue).  The
router is a thin shim: parse the path, hand the JSON to the core, write
the (status, body) it returns.
"""

from __future__ import annotations

import json
import logging
import re
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

from ..errors import NotFoundError, QuarksError, ValidationError
from .core import NodeCore

log = logging.getLogger(__name__)

PUBLIC_BODY_LIMIT = 1 * 1024 * 1024
INTERNAL_BODY_LIMIT = 256 * 1024 * 1024

_CHANNEL_PATH = re.compile(r"^/channels/([0-9a-f]{64})/(nodes|members|key|messages)$")
_USER_CERT_PATH = re.compile(r"^/users/([^/]+)/certificate$")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "quarksd"

    @property
    def core(self) -> NodeCore:
        return self.server.core  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):  # route through logging, not stderr
        log.debug("%s %s", self.address_string(), fmt % args)

    def _read_body(self, limit: int) -> dict:
        length = self.headers.get("Content-Length")
        if length is None:
            raise ValidationError("Content-Length is required")
        n = int(length)
        if n > limit:
            raise ValidationError("request body exceeds %d bytes" % limit)
        raw = self.rfile.read(n)
        try:
            obj = json.loads(raw)
        except ValueError:
            raise ValidationError("request body is not valid JSON") from None
        if not isinstance(obj, dict):
            raise ValidationError("request body must be a JSON object")
        return obj

    def _respond(self, status: int, body: dict) -> None:
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _dispatch(self, fn) -> None:
        try:
            status, body = fn()
        except QuarksError as e:
            self._respond(e.http_status, {"error": {"code": e.code, "message": e.message}})
            return
        except Exception:
            log.exception("unhandled error serving %s %s", self.command, self.path)
            self._respond(500, {"error": {"code": "internal", "message": "internal error"}})
            return
        self._respond(status, body)

    def do_POST(self):  # noqa: N802 (stdlib naming)
        parsed = urlparse(self.path)
        path = parsed.path
        if path == "/register":
            self._dispatch(lambda: self.core.handle_register(self._read_body(PUBLIC_BODY_LIMIT)))
        elif path == "/channels":
            self._dispatch(lambda: self.core.handle_create_channel(self._read_body(PUBLIC_BODY_LIMIT)))
        elif path == "/internal/replicate":
            self._dispatch(lambda: self.core.handle_replicate(self._read_body(INTERNAL_BODY_LIMIT)))
        elif path == "/internal/snapshot":
            self._dispatch(lambda: self.core.handle_snapshot(self._read_body(INTERNAL_BODY_LIMIT)))
        else:
            m = _CHANNEL_PATH.match(path)
            if m is None:
                self._dispatch(lambda: (_ for _ in ()).throw(NotFoundError("no such endpoint")))
                return
            channel_id, op = m.group(1), m.group(2)
            handlers = {
                "nodes": self.core.handle_add_node,
                "members": self.core.handle_add_member,
                "key": self.core.handle_get_key,
                "messages": self.core.handle_send_message,
            }
            self._dispatch(
                lambda: handlers[op](channel_id, self._read_body(PUBLIC_BODY_LIMIT))
            )

    def do_GET(self):  # noqa: N802
        parsed = urlparse(self.path)
        path = parsed.path
        if path == "/healthz":
            self._dispatch(self.core.handle_healthz)
            return
        m = _USER_CERT_PATH.match(path)
        if m is not None:
            username = m.group(1)
            self._dispatch(lambda: self.core.handle_user_certificate(username))
            return
        m = _CHANNEL_PATH.match(path)
        if m is not None and m.group(2) == "messages":
            channel_id = m.group(1)
            query = parse_qs(parsed.query)
            raw_ts = query.get("ts", ["0"])[0]
            self._dispatch(
                lambda: self.core.handle_read_messages(
                    channel_id, _parse_ts(raw_ts), dict(self.headers.items())
                )
            )
            return
        self._dispatch(lambda: (_ for _ in ()).throw(NotFoundError("no such endpoint")))


def _parse_ts(raw: str) -> int:
    try:
        ts = int(raw)
    except ValueError:
        raise ValidationError("ts must be an integer") from None
    if ts < 0:
        raise ValidationError("ts must be non-negative")
    return ts


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 256
    allow_reuse_address = True

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._open_sockets = set()
        self._sockets_lock = threading.Lock()

    def process_request(self, request, client_address):
        with self._sockets_lock:
            self._open_sockets.add(request)
        super().process_request(request, client_address)

    def shutdown_request(self, request):
        with self._sockets_lock:
            self._open_sockets.discard(request)
        super().shutdown_request(request)

    def close_all_connections(self):
        """Sever keep-alive connections; used when simulating node loss
        and during teardown so handler threads exit promptly."""
        with self._sockets_lock:
            sockets = list(self._open_sockets)
        for sock in sockets:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class NodeServer:
    """A node daemon bound to one address, servable from a thread.

    Binding happens in the constructor so ephemeral ports (port 0) are
    resolved before the node identity (which embeds the address) is
    created.
    """

    def __init__(self, data_dir: Path, host: str = "127.0.0.1", port: int = 0):
        self._httpd = _Server((host, port), _Handler)
        actual_port = self._httpd.server_address[1]
        self.address = "%s:%d" % (host, actual_port)
        self.core = NodeCore(self.address, Path(data_dir))
        self._httpd.core = self.core  # type: ignore[attr-defined]
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "NodeServer":
        self._thread = threading.Thread(
            target=self._httpd.serve_forever,
            kwargs={"poll_interval": 0.1},
            name="node-%s" % self.address,
            daemon=True,
        )
        self._thread.start()
        log.info("node %s serving", self.address)
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._httpd.close_all_connections()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.core.close()

    def serve_forever(self) -> None:
        self._httpd.serve_forever(poll_interval=0.2)

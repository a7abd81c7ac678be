"""Outbound HTTP to peer nodes: certificate fetch, block replication,
and snapshot push.

All traffic goes through one helper so tests can install a tap and
byte-scan everything a node ever sends to another node.  TLS termination
is deployment configuration; the protocol itself carries its own
signatures.
"""

from __future__ import annotations

import json
import threading
from typing import Callable, List, Tuple

import requests

from .. import wire
from ..crypto import Certificate
from ..errors import FederationError, GapError, NotFoundError, error_from_code

CONNECT_TIMEOUT = 2.0
READ_TIMEOUT = 15.0

# Tap callbacks receive (method, url, body_bytes) for every outbound
# peer request; used by the confidentiality tests to capture inter-node
# traffic.
_taps: List[Callable[[str, str, bytes], None]] = []
_taps_lock = threading.Lock()


def add_tap(fn: Callable[[str, str, bytes], None]) -> None:
    with _taps_lock:
        _taps.append(fn)


def remove_tap(fn: Callable[[str, str, bytes], None]) -> None:
    with _taps_lock:
        if fn in _taps:
            _taps.remove(fn)


def _record(method: str, url: str, body: bytes) -> None:
    with _taps_lock:
        taps = list(_taps)
    for fn in taps:
        fn(method, url, body)


class PeerClient:
    """HTTP client for node-to-node calls with connection reuse.

    One instance is shared by every handler thread of a node (request
    forwarding fans in here), so the pool must hold as many sockets as
    there can be concurrent forwarded requests.
    """

    def __init__(self, timeout: Tuple[float, float] = (CONNECT_TIMEOUT, READ_TIMEOUT)):
        self._session = requests.Session()
        adapter = requests.adapters.HTTPAdapter(pool_connections=16, pool_maxsize=512)
        self._session.mount("http://", adapter)
        self._timeout = timeout

    def close(self) -> None:
        self._session.close()

    def _post(self, address: str, path: str, payload: dict) -> dict:
        url = "http://%s%s" % (address, path)
        body = json.dumps(payload).encode("utf-8")
        _record("POST", url, body)
        try:
            resp = self._session.post(
                url,
                data=body,
                headers={"Content-Type": "application/json"},
                timeout=self._timeout,
            )
        except requests.RequestException as e:
            raise FederationError("peer %s unreachable: %s" % (address, e)) from None
        return _decode_response(resp, address)

    def _get(self, address: str, path: str) -> dict:
        url = "http://%s%s" % (address, path)
        _record("GET", url, b"")
        try:
            resp = self._session.get(url, timeout=self._timeout)
        except requests.RequestException as e:
            raise FederationError("peer %s unreachable: %s" % (address, e)) from None
        return _decode_response(resp, address)

    # -- concrete peer calls ------------------------------------------------

    def healthz(self, address: str) -> dict:
        return self._get(address, "/healthz")

    def fetch_node_certificate(self, address: str) -> Certificate:
        info = self.healthz(address)
        return wire.cert_from_wire(info.get("certificate"))

    def fetch_user_certificate(self, address: str, username: str) -> Certificate:
        obj = self._get(address, "/users/%s/certificate" % username)
        return wire.cert_from_wire(obj.get("certificate"))

    def push_block(self, address: str, envelope: dict) -> dict:
        return self._post(address, "/internal/replicate", envelope)

    def push_snapshot(self, address: str, envelope: dict) -> dict:
        return self._post(address, "/internal/snapshot", envelope)

    def forward(self, address: str, path: str, envelope: dict) -> Tuple[int, dict]:
        """Relay a user envelope to the channel sequencer verbatim and
        return (status, body) untouched so the caller can pass the
        sequencer's verdict straight back to the user."""
        url = "http://%s%s" % (address, path)
        body = json.dumps(envelope).encode("utf-8")
        _record("POST", url, body)
        try:
            resp = self._session.post(
                url,
                data=body,
                headers={"Content-Type": "application/json"},
                timeout=self._timeout,
            )
            return resp.status_code, resp.json()
        except (requests.RequestException, ValueError) as e:
            raise FederationError("sequencer %s unreachable: %s" % (address, e)) from None


def _decode_response(resp: requests.Response, address: str) -> dict:
    try:
        obj = resp.json()
    except ValueError:
        raise FederationError(
            "peer %s returned non-JSON (%d)" % (address, resp.status_code)
        ) from None
    if resp.status_code >= 400:
        err = obj.get("error") if isinstance(obj, dict) else None
        if isinstance(err, dict):
            code = err.get("code", "error")
            message = err.get("message", "")
            if code == "gap":
                raise GapError(message)
            if code == "not_found":
                raise NotFoundError(message)
            exc = error_from_code(code, message)
            raise exc
        raise FederationError("peer %s returned %d" % (address, resp.status_code))
    if not isinstance(obj, dict):
        raise FederationError("peer %s returned a non-object" % address)
    return obj

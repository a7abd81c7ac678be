"""Nonce replay cache.

Per-node set of seen nonces with a TTL window.  Nonces are random (not
timestamps), so no clock-skew handling is needed; the TTL only bounds
memory.  Insertions happen after signature verification so an attacker
cannot poison the cache with unauthenticated garbage.  Expiry runs
incrementally (entries age out in insertion order), so no request ever
pays for a full-cache sweep.
"""

from __future__ import annotations

import threading
import time
from collections import deque

from ..errors import ReplayError

DEFAULT_TTL_SECONDS = 600.0


class NonceCache:
    def __init__(self, ttl_seconds: float = DEFAULT_TTL_SECONDS):
        self._ttl = ttl_seconds
        self._seen: dict[bytes, float] = {}
        self._order: deque[tuple[float, bytes]] = deque()
        self._lock = threading.Lock()

    def check_and_insert(self, nonce: bytes) -> None:
        """Record a nonce, raising ``ReplayError`` if it was already seen
        within the replay window."""
        now = time.monotonic()
        with self._lock:
            # TTL is constant, so the deque is expiry-ordered: pop only
            # what has actually aged out.
            while self._order and self._order[0][0] <= now:
                _, old = self._order.popleft()
                expiry = self._seen.get(old)
                if expiry is not None and expiry <= now:
                    del self._seen[old]
            expiry = self._seen.get(nonce)
            if expiry is not None and expiry > now:
                raise ReplayError("nonce was already used")
            expires_at = now + self._ttl
            self._seen[nonce] = expires_at
            self._order.append((expires_at, nonce))

    def __len__(self) -> int:
        with self._lock:
            return len(self._seen)

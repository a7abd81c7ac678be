"""Load generation: simulated user populations in cycles, measuring
per-request latency and served throughput for send and read.

Users are in-process client-library actors distributed round-robin over
the nodes.  Registration and channel membership happen during setup and
warm-up and never count toward the figures; each actor keeps its own
sample list, merged only after its thread has stopped, so aggregation
never contends with request execution.
"""

from __future__ import annotations

import gc
import logging
import random
import statistics
import threading
import time
from dataclasses import dataclass
from typing import Dict, List, Tuple

from ..client import QuarksClient, keygen_and_register
from ..errors import QuarksError, ValidationError
from .network import Network

log = logging.getLogger(__name__)

OPS = ("send", "read")


@dataclass(frozen=True)
class LoadCycleSpec:
    user_count: int
    duration_seconds: float = 30.0
    warmup_seconds: float = 1.0
    send_read_ratio: Tuple[int, int] = (1, 1)
    stress: bool = False
    # Each poll asks for messages newer than max(last seen, now - window),
    # like a chat client catching up: the response stays small no matter
    # how many users are sending.
    read_window_ns: int = 500_000_000
    # Pause between operations per user (jittered), as interactive load
    # tools model users; 0 disables pacing entirely.
    think_time_seconds: float = 0.25

    def __post_init__(self):
        if self.user_count <= 0:
            raise ValidationError("user_count must be positive")
        if self.duration_seconds <= 0:
            raise ValidationError("duration_seconds must be positive")


@dataclass
class CycleResult:
    cycle: int
    user_count: int
    stress: bool
    duration_seconds: float
    median_ms: Dict[str, float]
    p95_ms: Dict[str, float]
    throughput_rps: Dict[str, float]
    failures: int

    @property
    def total_throughput(self) -> float:
        return sum(self.throughput_rps.values())


@dataclass
class _Sample:
    op: str
    at: float
    elapsed_ms: float
    ok: bool


class _UserActor:
    """One simulated member: alternates sends and reads against its node."""

    def __init__(self, index: int, network: Network, keystore):
        self.index = index
        self.network = network
        self.client = QuarksClient(keystore)
        self.since_ts = time.time_ns()  # only read traffic generated after joining
        self.samples: List[_Sample] = []
        self._op_cycle: List[str] = []
        self._read_window_ns = 250_000_000
        self._think_time = 0.0
        self._rng = random.Random(self.index)

    def configure(self, ratio: Tuple[int, int], read_window_ns: int, think_time: float) -> None:
        sends, reads = ratio
        self._op_cycle = ["send"] * sends + ["read"] * reads
        self._read_window_ns = read_window_ns
        self._think_time = think_time
        self._rng = random.Random(0xC0FFEE ^ self.index)

    def run(self, stop: threading.Event) -> None:
        channel = self.network.channel_id
        i = 0
        while not stop.is_set():
            op = self._op_cycle[i % len(self._op_cycle)]
            i += 1
            started = time.monotonic()
            ok = True
            try:
                if op == "send":
                    self.client.send(channel, "load-%d-%d" % (self.index, i))
                else:
                    since = max(self.since_ts, time.time_ns() - self._read_window_ns)
                    result = self.client.read(channel, since)
                    last = result.last_key_ts
                    if last is not None:
                        self.since_ts = last + 1
            except QuarksError:
                ok = False
            self.samples.append(
                _Sample(op=op, at=started, elapsed_ms=(time.monotonic() - started) * 1000.0, ok=ok)
            )
            if self._think_time > 0:
                stop.wait(self._think_time * self._rng.uniform(0.5, 1.5))

    def close(self) -> None:
        self.client.close()


class LoadRunner:
    """Runs a list of cycle specs against a network, growing the user
    population between cycles."""

    def __init__(self, network: Network):
        self.network = network
        self._actors: List[_UserActor] = []
        self._admin_client = QuarksClient(network.admin)

    def close(self) -> None:
        for actor in self._actors:
            actor.close()
        self._admin_client.close()

    def _ensure_users(self, count: int) -> None:
        """Register and enroll users up to ``count`` (setup traffic,
        excluded from measurement)."""
        while len(self._actors) < count:
            i = len(self._actors)
            node = self.network.node_for(i)
            username = "user-%03d" % i
            ks = keygen_and_register(node.address, username)
            self._admin_client.add_member(
                self.network.channel_id, username, node.address
            )
            actor = _UserActor(i, self.network, ks)
            actor.client.get_channel_key(self.network.channel_id)
            self._actors.append(actor)

    def run_cycle(self, cycle_index: int, spec: LoadCycleSpec) -> CycleResult:
        self._ensure_users(spec.user_count)
        actors = self._actors[: spec.user_count]
        for actor in actors:
            actor.samples = []
            actor.configure(spec.send_read_ratio, spec.read_window_ns, spec.think_time_seconds)
        # Survivors of earlier cycles (committed blocks, caches) are
        # permanent for the rest of the run: freezing them keeps cyclic
        # GC from rescanning an ever-growing heap mid-measurement.
        gc.collect()
        gc.freeze()
        stop = threading.Event()
        threads = [
            threading.Thread(target=actor.run, args=(stop,), daemon=True)
            for actor in actors
        ]
        started = time.monotonic()
        for t in threads:
            t.start()
        time.sleep(spec.warmup_seconds + spec.duration_seconds)
        stop.set()
        for t in threads:
            t.join(timeout=60)
        window_start = started + spec.warmup_seconds
        window_end = window_start + spec.duration_seconds
        result = _aggregate(cycle_index, spec, actors, window_start, window_end)
        log.info(
            "cycle %d (%d users%s): %.1f req/s, send p50 %.1f ms, read p50 %.1f ms, %d failures",
            cycle_index,
            spec.user_count,
            " stress" if spec.stress else "",
            result.total_throughput,
            result.median_ms.get("send", 0.0),
            result.median_ms.get("read", 0.0),
            result.failures,
        )
        return result

    def run_cycles(self, specs: List[LoadCycleSpec]) -> List[CycleResult]:
        results = []
        for i, spec in enumerate(specs):
            results.append(self.run_cycle(i, spec))
        return results


def _aggregate(
    cycle_index: int,
    spec: LoadCycleSpec,
    actors: List[_UserActor],
    window_start: float,
    window_end: float,
) -> CycleResult:
    window = window_end - window_start
    latencies: Dict[str, List[float]] = {op: [] for op in OPS}
    counts: Dict[str, int] = {op: 0 for op in OPS}
    failures = 0
    for actor in actors:
        for s in actor.samples:
            if s.at < window_start or s.at >= window_end:
                continue
            if not s.ok:
                failures += 1
                continue
            latencies[s.op].append(s.elapsed_ms)
            counts[s.op] += 1
    median_ms = {}
    p95_ms = {}
    throughput = {}
    for op in OPS:
        values = latencies[op]
        median_ms[op] = statistics.median(values) if values else 0.0
        p95_ms[op] = _percentile(values, 95.0) if values else 0.0
        throughput[op] = counts[op] / window if window > 0 else 0.0
    return CycleResult(
        cycle=cycle_index,
        user_count=spec.user_count,
        stress=spec.stress,
        duration_seconds=window,
        median_ms=median_ms,
        p95_ms=p95_ms,
        throughput_rps=throughput,
        failures=failures,
    )


def _percentile(values: List[float], pct: float) -> float:
    ordered = sorted(values)
    if not ordered:
        return 0.0
    rank = max(0, min(len(ordered) - 1, int(round(pct / 100.0 * len(ordered))) - 1))
    return ordered[rank]


def cycle_specs(
    normal_counts: List[int],
    stress_counts: List[int],
    duration_seconds: float,
    warmup_seconds: float = 1.0,
    send_read_ratio: Tuple[int, int] = (1, 1),
) -> List[LoadCycleSpec]:
    specs = [
        LoadCycleSpec(
            user_count=c,
            duration_seconds=duration_seconds,
            warmup_seconds=warmup_seconds,
            send_read_ratio=send_read_ratio,
        )
        for c in normal_counts
    ]
    specs += [
        LoadCycleSpec(
            user_count=c,
            duration_seconds=duration_seconds,
            warmup_seconds=warmup_seconds,
            send_read_ratio=send_read_ratio,
            stress=True,
        )
        for c in stress_counts
    ]
    return specs

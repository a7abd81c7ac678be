"""Result persistence and trend verification.

Both the CSV codec and the trend checks are pure functions of the cycle
results, so re-running the analysis on a saved CSV reproduces the same
verdicts bit for bit.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Dict, List

from ..errors import ValidationError
from .load import OPS, CycleResult

CSV_COLUMNS = ["cycle", "user_count", "op", "median_ms", "p95_ms", "throughput_rps", "failures"]

THROUGHPUT_STEP_TOLERANCE = 0.10
LATENCY_STEP_TOLERANCE = 0.10
STRESS_PLATEAU_TOLERANCE = 0.15


def results_to_csv(results: List[CycleResult]) -> str:
    """One row per (cycle, op); the stress flag rides on the op column
    prefix-free via the user counts, so the columns stay exactly the
    documented set."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(CSV_COLUMNS + ["stress", "duration_seconds"])
    for r in results:
        for op in OPS:
            writer.writerow(
                [
                    r.cycle,
                    r.user_count,
                    op,
                    repr(r.median_ms[op]),
                    repr(r.p95_ms[op]),
                    repr(r.throughput_rps[op]),
                    r.failures if op == OPS[0] else 0,
                    int(r.stress),
                    repr(r.duration_seconds),
                ]
            )
    return buf.getvalue()


def write_csv(results: List[CycleResult], path: Path) -> None:
    Path(path).write_text(results_to_csv(results))


def results_from_csv(text: str) -> List[CycleResult]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise ValidationError("empty results CSV")
    by_cycle: Dict[int, CycleResult] = {}
    for row in reader:
        if not row:
            continue
        record = dict(zip(header, row))
        cycle = int(record["cycle"])
        result = by_cycle.get(cycle)
        if result is None:
            result = CycleResult(
                cycle=cycle,
                user_count=int(record["user_count"]),
                stress=bool(int(record.get("stress", "0"))),
                duration_seconds=float(record.get("duration_seconds", "0")),
                median_ms={},
                p95_ms={},
                throughput_rps={},
                failures=0,
            )
            by_cycle[cycle] = result
        op = record["op"]
        result.median_ms[op] = float(record["median_ms"])
        result.p95_ms[op] = float(record["p95_ms"])
        result.throughput_rps[op] = float(record["throughput_rps"])
        result.failures += int(record["failures"])
    return [by_cycle[c] for c in sorted(by_cycle)]


def read_csv(path: Path) -> List[CycleResult]:
    return results_from_csv(Path(path).read_text())


def assert_trends(results: List[CycleResult]) -> dict:
    """Check the expected load-curve shape and availability.

    Returns a machine-readable report; never raises on a failing check.
    (a) throughput is nondecreasing across normal cycles within a 10%
    per-step tolerance, (b) stress throughput plateaus (max within 15%
    of the stress mean), (c) median response time is nondecreasing with
    load within 10% per step, and (d) no request failed in any cycle.
    """
    normal = [r for r in results if not r.stress]
    stress = [r for r in results if r.stress]
    if len(normal) < 5 or len(stress) < 3:
        raise ValidationError(
            "trend analysis needs >= 5 normal and >= 3 stress cycles, got %d/%d"
            % (len(normal), len(stress))
        )
    checks = []

    steps = []
    ok = True
    for prev, cur in zip(normal, normal[1:]):
        floor = prev.total_throughput * (1.0 - THROUGHPUT_STEP_TOLERANCE)
        passed = cur.total_throughput >= floor
        ok = ok and passed
        steps.append(
            {
                "from_users": prev.user_count,
                "to_users": cur.user_count,
                "prev_rps": prev.total_throughput,
                "cur_rps": cur.total_throughput,
                "passed": passed,
            }
        )
    checks.append(
        {"name": "throughput_nondecreasing_normal", "passed": ok, "steps": steps}
    )

    rates = [r.total_throughput for r in stress]
    mean_rate = sum(rates) / len(rates)
    plateau_ok = max(rates) <= mean_rate * (1.0 + STRESS_PLATEAU_TOLERANCE)
    checks.append(
        {
            "name": "throughput_plateau_stress",
            "passed": plateau_ok,
            "max_rps": max(rates),
            "mean_rps": mean_rate,
        }
    )

    for op in OPS:
        steps = []
        ok = True
        for prev, cur in zip(normal, normal[1:]):
            floor = prev.median_ms[op] * (1.0 - LATENCY_STEP_TOLERANCE)
            passed = cur.median_ms[op] >= floor
            ok = ok and passed
            steps.append(
                {
                    "from_users": prev.user_count,
                    "to_users": cur.user_count,
                    "prev_ms": prev.median_ms[op],
                    "cur_ms": cur.median_ms[op],
                    "passed": passed,
                }
            )
        checks.append(
            {
                "name": "latency_nondecreasing_normal_%s" % op,
                "passed": ok,
                "steps": steps,
            }
        )

    total_failures = sum(r.failures for r in results)
    checks.append(
        {
            "name": "zero_failures_through_stress",
            "passed": total_failures == 0,
            "failures": total_failures,
        }
    )

    return {"passed": all(c["passed"] for c in checks), "checks": checks}

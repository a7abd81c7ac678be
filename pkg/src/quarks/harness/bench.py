"""quarks-bench: spawn a local network, run load cycles, verify the
trend shape, and emit charts plus CSV.

    quarks-bench --nodes 3 --cycles 20:100:20 --stress 110:150:10 \
                 --duration 30 --out results/
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import ValidationError
from .analysis import assert_trends, write_csv
from .load import LoadRunner, cycle_specs
from .network import spawn_network
from .plots import emit_plots


def parse_range(spec: str) -> list[int]:
    """start:stop:step, inclusive of stop."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValidationError("range must be start:stop:step, got %r" % spec)
    start, stop, step = (int(p) for p in parts)
    if step <= 0 or stop < start:
        raise ValidationError("invalid range %r" % spec)
    return list(range(start, stop + 1, step))


def verify_replicas(network) -> dict:
    """Post-run integrity: all replicas verify and share one head hash."""
    heads = []
    verified = []
    for node in network.nodes:
        if not node.alive or node.server is None:
            continue
        host = node.server.core._host(network.channel_id)
        verified.append(host.ledger.verify_chain())
        heads.append(host.ledger.head.block_hash.hex())
    return {
        "replicas": len(heads),
        "all_verified": all(verified),
        "heads_equal": len(set(heads)) == 1,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="quarks-bench", description=__doc__)
    parser.add_argument("--nodes", type=int, default=3)
    parser.add_argument("--cycles", default="20:100:20", help="normal user counts start:stop:step")
    parser.add_argument("--stress", default="110:150:10", help="stress user counts start:stop:step")
    parser.add_argument("--duration", type=float, default=30.0, help="measured seconds per cycle")
    parser.add_argument("--warmup", type=float, default=1.0, help="discarded seconds per cycle")
    parser.add_argument("--ratio", default="1:1", help="send:read mix per user")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--subprocess-nodes", action="store_true", help="run real quarksd processes")
    parser.add_argument("--export-endpoints", action="store_true", help="print the endpoint list for external load tools and exit")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    log = logging.getLogger("quarks-bench")

    normal_counts = parse_range(args.cycles)
    stress_counts = parse_range(args.stress)
    sends, _, reads = args.ratio.partition(":")
    ratio = (int(sends), int(reads or sends))

    out_dir = Path(args.out)
    network = spawn_network(
        args.nodes, in_process=not args.subprocess_nodes
    )
    try:
        if args.export_endpoints:
            print(
                json.dumps(
                    {
                        "channel_id": network.channel_id,
                        "nodes": network.addresses,
                        "endpoints": [
                            "http://%s/channels/%s/messages" % (a, network.channel_id)
                            for a in network.addresses
                        ],
                    },
                    indent=2,
                )
            )
            return 0
        specs = cycle_specs(
            normal_counts, stress_counts, args.duration, args.warmup, ratio
        )
        runner = LoadRunner(network)
        try:
            results = runner.run_cycles(specs)
        finally:
            runner.close()
        report = assert_trends(results)
        integrity = verify_replicas(network)
    finally:
        network.stop()

    out_dir.mkdir(parents=True, exist_ok=True)
    emit_plots(results, out_dir)
    write_csv(results, out_dir / "results.csv")
    (out_dir / "trend_report.json").write_text(
        json.dumps({"trends": report, "integrity": integrity}, indent=2)
    )

    degraded = any(r.failures for r in results)
    log.info("trend checks passed: %s", report["passed"])
    log.info("replica integrity: %s", integrity)
    if degraded:
        log.warning("run is degraded: at least one cycle had failures")
    print(json.dumps({"trends": report["passed"], "integrity": integrity, "degraded": degraded}))
    return 0 if report["passed"] and integrity["all_verified"] and integrity["heads_equal"] else 1


if __name__ == "__main__":
    sys.exit(main())

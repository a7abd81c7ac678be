"""Harness: network lifecycle, load cycles, analysis, and plots."""

import threading

import pytest

from quarks.errors import ValidationError
from quarks.harness import (
    CycleResult,
    LoadCycleSpec,
    LoadRunner,
    assert_trends,
    emit_plots,
    results_from_csv,
    results_to_csv,
    spawn_network,
)
from quarks.harness.plots import PLOT_FILES


def synthetic_results(throughputs, medians, stress_from, failures=0):
    results = []
    for i, (rps, ms) in enumerate(zip(throughputs, medians)):
        results.append(
            CycleResult(
                cycle=i,
                user_count=20 * (i + 1),
                stress=i >= stress_from,
                duration_seconds=30.0,
                median_ms={"send": ms, "read": ms * 0.5},
                p95_ms={"send": ms * 2, "read": ms},
                throughput_rps={"send": rps / 2, "read": rps / 2},
                failures=failures,
            )
        )
    return results


class TestNetworkLifecycle:
    def test_three_nodes_share_channel(self, three_nodes):
        for i in range(3):
            info = three_nodes.healthz(i)
            assert info["channels"] == 1
            assert three_nodes.channel_id in info["channel_ids"]

    def test_single_node_network_valid(self, one_node):
        assert one_node.healthz(0)["channels"] == 1

    def test_teardown_leaves_no_node_threads(self, tmp_path):
        net = spawn_network(2, base_dir=tmp_path / "net")
        names_during = {t.name for t in threading.enumerate()}
        assert any(n.startswith("node-") for n in names_during)
        net.stop()
        names_after = {
            t.name for t in threading.enumerate() if t.is_alive()
        }
        assert not any(n.startswith("node-") for n in names_after)
        assert not any(n.startswith("sequencer-") for n in names_after)
        assert not any(n.startswith("replicator-") for n in names_after)

    def test_subprocess_nodes_start_and_stop(self, tmp_path):
        net = spawn_network(2, base_dir=tmp_path / "net", in_process=False)
        try:
            assert net.healthz(0)["channels"] == 1
            assert net.healthz(1)["channels"] == 1
        finally:
            net.stop()
        for node in net.nodes:
            assert node.process.poll() is not None


class TestLoadCycles:
    def test_smoke_cycle_has_throughput_and_no_failures(self, three_nodes):
        runner = LoadRunner(three_nodes)
        try:
            result = runner.run_cycle(
                0, LoadCycleSpec(user_count=1, duration_seconds=1.0, warmup_seconds=0.2)
            )
        finally:
            runner.close()
        assert result.total_throughput > 0
        assert result.failures == 0
        assert result.median_ms["send"] > 0
        assert result.median_ms["read"] > 0

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            LoadCycleSpec(user_count=0)
        with pytest.raises(ValidationError):
            LoadCycleSpec(user_count=1, duration_seconds=0)


class TestTrendAnalysis:
    def test_monotone_series_passes(self):
        results = synthetic_results(
            throughputs=[100, 110, 120, 125, 126, 126, 125, 127],
            medians=[10, 12, 14, 16, 18, 22, 26, 30],
            stress_from=5,
        )
        report = assert_trends(results)
        assert report["passed"]

    def test_throughput_collapse_fails(self):
        results = synthetic_results(
            throughputs=[100, 110, 60, 125, 126, 126, 125, 127],
            medians=[10, 12, 14, 16, 18, 22, 26, 30],
            stress_from=5,
        )
        report = assert_trends(results)
        assert not report["passed"]
        failing = {c["name"]: c for c in report["checks"]}
        assert not failing["throughput_nondecreasing_normal"]["passed"]

    def test_flat_stress_passes_plateau(self):
        results = synthetic_results(
            throughputs=[100, 110, 120, 125, 126, 126, 126, 126],
            medians=[10, 12, 14, 16, 18, 22, 26, 30],
            stress_from=5,
        )
        report = assert_trends(results)
        plateau = [c for c in report["checks"] if c["name"] == "throughput_plateau_stress"][0]
        assert plateau["passed"]

    def test_latency_regression_fails(self):
        results = synthetic_results(
            throughputs=[100, 110, 120, 125, 126, 126, 126, 126],
            medians=[10, 12, 5, 16, 18, 22, 26, 30],
            stress_from=5,
        )
        report = assert_trends(results)
        assert not report["passed"]

    def test_failures_fail_availability(self):
        results = synthetic_results(
            throughputs=[100, 110, 120, 125, 126, 126, 126, 126],
            medians=[10, 12, 14, 16, 18, 22, 26, 30],
            stress_from=5,
            failures=1,
        )
        report = assert_trends(results)
        availability = [
            c for c in report["checks"] if c["name"] == "zero_failures_through_stress"
        ][0]
        assert not availability["passed"]

    def test_requires_enough_cycles(self):
        results = synthetic_results([100, 110], [10, 11], stress_from=2)
        with pytest.raises(ValidationError):
            assert_trends(results)


class TestPersistence:
    def test_csv_roundtrip_identity(self):
        # Oracle: write, parse, compare every field.
        results = synthetic_results(
            throughputs=[100.25, 110.5, 120.125, 125.0625, 126.5, 127.0, 126.75, 127.5],
            medians=[10.1, 12.2, 14.3, 16.4, 18.5, 22.6, 26.7, 30.8],
            stress_from=5,
        )
        again = results_from_csv(results_to_csv(results))
        assert len(again) == len(results)
        for a, b in zip(results, again):
            assert a.cycle == b.cycle
            assert a.user_count == b.user_count
            assert a.stress == b.stress
            assert a.median_ms == b.median_ms
            assert a.p95_ms == b.p95_ms
            assert a.throughput_rps == b.throughput_rps
            assert a.failures == b.failures

    def test_trend_verdict_reproducible_from_csv(self):
        results = synthetic_results(
            throughputs=[100, 110, 120, 125, 126, 126, 125, 127],
            medians=[10, 12, 14, 16, 18, 22, 26, 30],
            stress_from=5,
        )
        direct = assert_trends(results)
        reloaded = assert_trends(results_from_csv(results_to_csv(results)))
        assert direct == reloaded

    def test_emit_plots_writes_four_svgs_and_csv(self, tmp_path):
        results = synthetic_results(
            throughputs=[100, 110, 120, 125, 126, 126, 125, 127, 128, 128],
            medians=[10, 12, 14, 16, 18, 22, 26, 30, 32, 33],
            stress_from=5,
        )
        files = emit_plots(results, tmp_path / "out")
        for name in PLOT_FILES:
            assert (tmp_path / "out" / name).exists()
        assert (tmp_path / "out" / "results.csv").exists()
        assert len(files) == 5

    def test_emit_plots_rejects_empty(self, tmp_path):
        with pytest.raises(ValidationError):
            emit_plots([], tmp_path / "out")

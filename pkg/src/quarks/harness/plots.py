"""Chart rendering: median response time and throughput versus user
count, split into normal and stress panels, as SVG plus the raw CSV."""

from __future__ import annotations

from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ..errors import ValidationError
from .analysis import write_csv
from .load import OPS, CycleResult

PLOT_FILES = (
    "response_time_normal.svg",
    "response_time_stress.svg",
    "throughput_normal.svg",
    "throughput_stress.svg",
)


def emit_plots(results: List[CycleResult], output_dir: Path) -> List[Path]:
    """Write the four charts and results.csv; returns the file list."""
    if not results:
        raise ValidationError("no results to plot")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    normal = [r for r in results if not r.stress]
    stress = [r for r in results if r.stress]
    written = []
    for results_slice, label, fname in (
        (normal, "normal cycles", PLOT_FILES[0]),
        (stress, "stress cycles", PLOT_FILES[1]),
    ):
        written.append(
            _latency_plot(results_slice, label, output_dir / fname)
        )
    for results_slice, label, fname in (
        (normal, "normal cycles", PLOT_FILES[2]),
        (stress, "stress cycles", PLOT_FILES[3]),
    ):
        written.append(
            _throughput_plot(results_slice, label, output_dir / fname)
        )
    csv_path = output_dir / "results.csv"
    write_csv(results, csv_path)
    written.append(csv_path)
    return written


def _latency_plot(results: List[CycleResult], label: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    users = [r.user_count for r in results]
    for op in OPS:
        ax.plot(users, [r.median_ms[op] for r in results], marker="o", label="%s median" % op)
        ax.plot(users, [r.p95_ms[op] for r in results], marker="x", linestyle="--", label="%s p95" % op)
    ax.set_xlabel("users")
    ax.set_ylabel("response time (ms)")
    ax.set_title("Median response time, %s" % label)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def _throughput_plot(results: List[CycleResult], label: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    users = [r.user_count for r in results]
    for op in OPS:
        ax.plot(users, [r.throughput_rps[op] for r in results], marker="o", label=op)
    ax.plot(users, [r.total_throughput for r in results], marker="s", label="total")
    ax.set_xlabel("users")
    ax.set_ylabel("requests / second")
    ax.set_title("Throughput, %s" % label)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path

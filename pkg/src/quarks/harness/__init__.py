from .analysis import assert_trends, read_csv, results_from_csv, results_to_csv, write_csv
from .load import CycleResult, LoadCycleSpec, LoadRunner, cycle_specs
from .network import Network, spawn_network
from .plots import emit_plots

__all__ = [
    "CycleResult",
    "LoadCycleSpec",
    "LoadRunner",
    "Network",
    "assert_trends",
    "cycle_specs",
    "emit_plots",
    "read_csv",
    "results_from_csv",
    "results_to_csv",
    "spawn_network",
    "write_csv",
]

"""Benchmark harness: synthetic objectives, the BO loop, GAP, CLI."""

from .functions import TestFunction, get, names
from .loop import BenchRun, LoopConfig, gap, run_bo
from .plots import emit_plots
from .suite import RunSpec, parse_manifest, run_suite

__all__ = [
    "TestFunction", "get", "names",
    "BenchRun", "LoopConfig", "gap", "run_bo",
    "emit_plots", "RunSpec", "parse_manifest", "run_suite",
]

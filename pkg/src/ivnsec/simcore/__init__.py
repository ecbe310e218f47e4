"""Simulation core: traffic sources, the event engine and run artefacts."""

from .engine import Engine, RunResult, SimulationError, run
from .output import build_summary, write_outputs
from .timing import NoDetection, TimingRecord, measure_timings, timing_stats

__all__ = ["Engine", "RunResult", "SimulationError", "run", "build_summary", "write_outputs",
           "NoDetection", "TimingRecord", "measure_timings", "timing_stats"]

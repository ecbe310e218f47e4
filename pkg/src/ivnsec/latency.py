"""Latency distributions and seeded random streams.

Durations are sampled in milliseconds and converted to integer microseconds
by the engine. Every random draw in a run comes from a named stream derived
from the run seed, so adding a new consumer never shifts existing samples.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Mapping, Sequence, Tuple, Union

import numpy as np


class LatencyError(ValueError):
    pass


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named consumer of randomness."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])))


def pert_mode(lo: float, avg: float, hi: float) -> float:
    """Mode that gives a modified-PERT distribution the requested mean."""
    return (6.0 * avg - lo - hi) / 4.0


@dataclass(frozen=True)
class Constant:
    value: float = 0.0

    def __post_init__(self):
        if self.value < 0:
            raise LatencyError("latency must be >= 0")

    @property
    def lo(self) -> float:
        return self.value

    @property
    def hi(self) -> float:
        return self.value

    @property
    def mean(self) -> float:
        return self.value

    def sample(self, rng: np.random.Generator, size=None):
        if size is None:
            return float(self.value)
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class Pert:
    """Modified-PERT: ``lo + (hi - lo) * Beta(a, b)`` with shape 4."""

    lo: float
    mode: float
    hi: float

    def __post_init__(self):
        if not (0 <= self.lo <= self.mode <= self.hi):
            raise LatencyError(f"PERT needs 0 <= min <= mode <= max, got {self.lo}, {self.mode}, {self.hi}")

    @classmethod
    def from_triple(cls, lo: float, avg: float, hi: float) -> "Pert":
        mode = pert_mode(lo, avg, hi)
        if not lo <= mode <= hi:
            raise LatencyError(f"no PERT mode in [{lo}, {hi}] reproduces mean {avg}")
        return cls(lo, mode, hi)

    @property
    def mean(self) -> float:
        return (self.lo + 4.0 * self.mode + self.hi) / 6.0

    def shape(self) -> Tuple[float, float]:
        span = self.hi - self.lo
        return (1.0 + 4.0 * (self.mode - self.lo) / span,
                1.0 + 4.0 * (self.hi - self.mode) / span)

    def unit(self, rng: np.random.Generator, size=None):
        """Beta draw on [0, 1]; 0 for a degenerate span."""
        if self.hi == self.lo:
            return 0.0 if size is None else np.zeros(size)
        a, b = self.shape()
        u = rng.beta(a, b, size)
        return float(u) if size is None else u

    def sample(self, rng: np.random.Generator, size=None):
        return self.lo + (self.hi - self.lo) * self.unit(rng, size)


@dataclass(frozen=True)
class Empirical:
    samples: Tuple[float, ...]

    def __post_init__(self):
        if not self.samples:
            raise LatencyError("empirical latency needs at least one sample")
        if min(self.samples) < 0:
            raise LatencyError("latency must be >= 0")

    @property
    def lo(self) -> float:
        return min(self.samples)

    @property
    def hi(self) -> float:
        return max(self.samples)

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    def sample(self, rng: np.random.Generator, size=None):
        arr = np.asarray(self.samples, dtype=float)
        idx = rng.integers(0, len(arr), size)
        return float(arr[idx]) if size is None else arr[idx]


LatencyModel = Union[Constant, Pert, Empirical]


def parse_latency(spec: Union[float, int, Mapping]) -> LatencyModel:
    """Build a model from ``{min, avg, max}``, ``{min, mode, max}``,
    ``{constant}`` or ``{samples}`` (all in ms), or a bare number."""
    if isinstance(spec, (int, float)):
        return Constant(float(spec))
    if "constant" in spec:
        return Constant(float(spec["constant"]))
    if "samples" in spec:
        return Empirical(tuple(float(s) for s in spec["samples"]))
    if "avg" in spec:
        return Pert.from_triple(float(spec["min"]), float(spec["avg"]), float(spec["max"]))
    if "mode" in spec:
        return Pert(float(spec["min"]), float(spec["mode"]), float(spec["max"]))
    raise LatencyError(f"unrecognized latency spec {dict(spec)!r}")


def latency_to_dict(model: LatencyModel) -> dict:
    if isinstance(model, Constant):
        return {"constant": model.value}
    if isinstance(model, Empirical):
        return {"samples": list(model.samples)}
    return {"min": model.lo, "mode": model.mode, "max": model.hi}


def ms_to_us(ms: float) -> int:
    return int(round(ms * 1000.0))


@dataclass(frozen=True)
class FlowModLatency:
    """Controller dispatch plus per-switch acknowledgement latency.

    With a ``budget_ms`` the acknowledgement draws are rescaled into the time
    left after dispatch and the return link, so a full reaction (dispatch,
    slowest ack, ack transport) never exceeds the budget. The relative
    position of each draw inside its range is preserved.
    """

    dispatch: LatencyModel = Pert.from_triple(7.0, 10.0, 19.0)
    ack: LatencyModel = Pert.from_triple(2.0, 5.0, 16.0)
    budget_ms: float = 0.0

    def sample(self, rng: np.random.Generator, n_switches: int,
               ack_link_ms: float = 0.0) -> Tuple[float, np.ndarray]:
        dispatch = float(self.dispatch.sample(rng))
        if n_switches == 0:
            return dispatch, np.zeros(0)
        if isinstance(self.ack, Pert) and self.budget_ms > 0:
            u = np.atleast_1d(self.ack.unit(rng, n_switches))
            cap = min(self.ack.hi, self.budget_ms - ack_link_ms - dispatch)
            cap = max(cap, self.ack.lo)
            acks = self.ack.lo + u * (cap - self.ack.lo)
        else:
            acks = np.atleast_1d(self.ack.sample(rng, n_switches)).astype(float)
        return dispatch, acks


def sum_bounds(models: Sequence[LatencyModel]) -> Tuple[float, float]:
    return (sum(m.lo for m in models), sum(m.hi for m in models))

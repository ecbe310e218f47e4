"""Network anomaly detection: per-stream interval metrics, min-max
normalization, mean-shift fingerprinting and nearest-mode assessment.

A monitor learns for a fixed number of tumbling intervals, fits its model,
then assesses every following interval. Assessment flags an interval when
its normalized metric vector lies farther than the kernel bandwidth from
every learned mode.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .netmodel import EthernetFrame, StreamKey, check_monitors, stream_key_of


class NadsError(Exception):
    pass


class DegenerateBandwidth(NadsError):
    pass


class NotTrained(NadsError):
    pass


class Metric(str, Enum):
    FRAME_SIZE = "FrameSize"
    BANDWIDTH = "Bandwidth"
    PACKET_GAP = "PacketGap"
    CYCLE_DEVIATION = "CycleDeviation"


class ModelState(str, Enum):
    LEARNING = "Learning"
    WORKING = "Working"


@dataclass(frozen=True)
class StreamMonitorConfig:
    """One monitored stream. ``bandwidth`` fixes h; otherwise h is
    ``bandwidth_factor`` times the mean nearest-neighbour distance of the
    training vectors, never below ``min_bandwidth``."""

    id: str
    stream: StreamKey
    metric_x: Metric = Metric.FRAME_SIZE
    metric_y: Metric = Metric.BANDWIDTH
    interval_us: int = 100_000
    learning_intervals: int = 100
    nominal_cycle_us: int = 0
    bandwidth: Optional[float] = None
    bandwidth_factor: float = 3.0
    min_bandwidth: float = 0.05
    tol: float = 1e-4
    max_iter: int = 100

    def __post_init__(self):
        if self.interval_us <= 0:
            raise ValueError("interval must be > 0")
        if self.learning_intervals < 10:
            raise ValueError("learning_intervals must be >= 10")
        if self.metric_x == self.metric_y:
            raise ValueError("metric_x and metric_y must differ")
        if Metric.CYCLE_DEVIATION in (self.metric_x, self.metric_y) and self.nominal_cycle_us <= 0:
            raise ValueError("CycleDeviation needs a nominal cycle > 0")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise DegenerateBandwidth("fixed bandwidth must be > 0")


# ---------------------------------------------------------------------------
# metrics


def raw_metric(metric: Metric, times_us: np.ndarray, sizes: np.ndarray,
               interval_us: int, nominal_cycle_us: int = 0) -> float:
    """Physical metric value: bytes, bytes/s, seconds, or a ratio."""
    n = len(times_us)
    if n == 0:
        return 0.0
    if metric is Metric.FRAME_SIZE:
        return float(sizes.mean())
    if metric is Metric.BANDWIDTH:
        return float(sizes.sum()) / (interval_us / 1e6)
    if n < 2:
        return 0.0
    gaps = np.diff(np.sort(times_us))
    if metric is Metric.PACKET_GAP:
        return float(gaps.mean()) / 1e6
    return float(np.abs(gaps - nominal_cycle_us).mean()) / nominal_cycle_us


@dataclass(frozen=True)
class MetricVector:
    interval_index: int
    raw_x: float
    raw_y: float
    frame_count: int
    x: Optional[float] = None
    y: Optional[float] = None
    clamped: bool = False

    @property
    def point(self) -> Tuple[float, float]:
        return (self.x, self.y)


def compute_raw(times_us, sizes, cfg: StreamMonitorConfig, interval_index: int) -> MetricVector:
    times_us = np.asarray(times_us, dtype=np.int64)
    sizes = np.asarray(sizes, dtype=np.int64)
    rx = raw_metric(cfg.metric_x, times_us, sizes, cfg.interval_us, cfg.nominal_cycle_us)
    ry = raw_metric(cfg.metric_y, times_us, sizes, cfg.interval_us, cfg.nominal_cycle_us)
    return MetricVector(interval_index, rx, ry, int(len(times_us)))


def compute_metrics(frames: Sequence[EthernetFrame], cfg: StreamMonitorConfig,
                    interval_index: int = 0) -> MetricVector:
    """Raw metric vector for the frames of one interval."""
    return compute_raw([f.timestamp for f in frames], [f.payload_len for f in frames], cfg, interval_index)


@dataclass(frozen=True)
class Normalizer:
    lo: float
    hi: float

    @classmethod
    def fit(cls, values: Sequence[float]) -> "Normalizer":
        return cls(float(min(values)), float(max(values)))

    def __call__(self, value: float) -> Tuple[float, bool]:
        if self.hi == self.lo:
            if value == self.lo:
                return 0.5, False
            return (0.0 if value < self.lo else 1.0), True
        u = (value - self.lo) / (self.hi - self.lo)
        if u < 0.0:
            return 0.0, True
        if u > 1.0:
            return 1.0, True
        return u, False


# ---------------------------------------------------------------------------
# mean shift


def _ascend(samples: np.ndarray, h: float, tol: float, max_iter: int) -> np.ndarray:
    """Move every sample uphill with a flat kernel until it stops."""
    pts = samples.copy()
    active = np.ones(len(pts), dtype=bool)
    h2 = h * h
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cur = pts[idx]
        d2 = ((cur[:, None, :] - samples[None, :, :]) ** 2).sum(axis=2)
        within = d2 <= h2
        new = (within.astype(float) @ samples) / within.sum(axis=1)[:, None]
        shift = np.sqrt(((new - cur) ** 2).sum(axis=1))
        pts[idx] = new
        active[idx[shift < tol]] = False
    return pts


def _merge(points: np.ndarray, radius: float) -> np.ndarray:
    """Greedy merge in index order, then repeat until modes are separated."""
    centers: List[np.ndarray] = []
    members: List[List[int]] = []
    for i, p in enumerate(points):
        for k, c in enumerate(centers):
            if np.hypot(*(p - c)) <= radius:
                members[k].append(i)
                centers[k] = points[members[k]].mean(axis=0)
                break
        else:
            centers.append(p.copy())
            members.append([i])
    merged = True
    while merged and len(centers) > 1:
        merged = False
        for a in range(len(centers)):
            for b in range(a + 1, len(centers)):
                if np.hypot(*(centers[a] - centers[b])) <= radius:
                    members[a].extend(members[b])
                    centers[a] = points[members[a]].mean(axis=0)
                    del centers[b], members[b]
                    merged = True
                    break
            if merged:
                break
    return np.array(centers)


def mean_shift_fit(samples, h: float, tol: float = 1e-4, max_iter: int = 100,
                   merge_radius: Optional[float] = None) -> np.ndarray:
    """Flat-kernel mean shift; returns the merged modes as an (m, 2) array."""
    if h <= 0:
        raise DegenerateBandwidth(f"bandwidth must be > 0, got {h}")
    samples = np.asarray(samples, dtype=float).reshape(-1, 2)
    if len(samples) == 0:
        raise ValueError("mean shift needs at least one sample")
    converged = _ascend(samples, h, tol, max_iter)
    return _merge(converged, h / 2.0 if merge_radius is None else merge_radius)


def mean_nn_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    np.fill_diagonal(d, np.inf)
    return float(d.min(axis=1).mean())


@dataclass
class MeanShiftModel:
    modes: np.ndarray
    h: float
    norm_x: Normalizer
    norm_y: Normalizer
    state: ModelState = ModelState.WORKING

    @classmethod
    def train(cls, vectors: Sequence[MetricVector], cfg: StreamMonitorConfig) -> "MeanShiftModel":
        nx = Normalizer.fit([v.raw_x for v in vectors])
        ny = Normalizer.fit([v.raw_y for v in vectors])
        pts = np.array([(nx(v.raw_x)[0], ny(v.raw_y)[0]) for v in vectors])
        if cfg.bandwidth is not None:
            h = cfg.bandwidth
        else:
            h = max(cfg.bandwidth_factor * mean_nn_distance(pts), cfg.min_bandwidth)
        modes = mean_shift_fit(pts, h, cfg.tol, cfg.max_iter)
        # every training point must be explained by some mode
        extra = []
        for p in pts:
            ref = np.vstack([modes] + extra) if extra else modes
            if np.sqrt(((ref - p) ** 2).sum(axis=1)).min() > h:
                extra.append(p[None, :])
        if extra:
            modes = np.vstack([modes] + extra)
        return cls(modes, float(h), nx, ny)

    def normalize(self, v: MetricVector) -> MetricVector:
        x, cx = self.norm_x(v.raw_x)
        y, cy = self.norm_y(v.raw_y)
        return MetricVector(v.interval_index, v.raw_x, v.raw_y, v.frame_count, x, y, cx or cy)

    def distance(self, x: float, y: float) -> float:
        return float(np.sqrt(((self.modes - (x, y)) ** 2).sum(axis=1)).min())

    def to_dict(self) -> dict:
        return {"h": self.h, "modes": self.modes.round(6).tolist(),
                "norm_x": [self.norm_x.lo, self.norm_x.hi], "norm_y": [self.norm_y.lo, self.norm_y.hi],
                "state": self.state.value}


class Verdict(str, Enum):
    LEARNING = "learning"
    NORMAL = "normal"
    ANOMALY = "anomaly"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class Assessment:
    verdict: Verdict
    distance: float


def assess(v: MetricVector, model: MeanShiftModel) -> Assessment:
    """Anomaly iff the nearest mode is farther than h (strict)."""
    if model is None or model.state is not ModelState.WORKING:
        raise NotTrained("model is still learning")
    if v.x is None:
        v = model.normalize(v)
    d = model.distance(v.x, v.y)
    return Assessment(Verdict.ANOMALY if d > model.h else Verdict.NORMAL, d)


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class IntervalRecord:
    nads_id: str
    stream: str
    vector: MetricVector
    verdict: Verdict
    distance: Optional[float] = None

    CSV_COLUMNS = ("nads_id", "stream", "interval_index", "raw_x", "raw_y", "x", "y",
                   "frame_count", "verdict", "distance")

    def csv_row(self) -> list:
        v = self.vector
        fmt = lambda f: "" if f is None else f"{f:.6g}"  # noqa: E731
        return [self.nads_id, self.stream, v.interval_index, fmt(v.raw_x), fmt(v.raw_y),
                fmt(v.x), fmt(v.y), v.frame_count, self.verdict.value, fmt(self.distance)]


@dataclass(frozen=True)
class AnomalyReport:
    timestamp: int
    nads_id: str
    monitor: str
    stream: StreamKey
    interval_index: int
    vector: MetricVector
    distance: float

    def to_dict(self) -> dict:
        v = self.vector
        return {"nads": self.nads_id, "monitor": self.monitor, "stream": self.stream.to_dict(),
                "interval_index": self.interval_index,
                "vector": {"x": round(v.x, 6), "y": round(v.y, 6), "raw_x": round(v.raw_x, 6),
                           "raw_y": round(v.raw_y, 6), "frame_count": v.frame_count},
                "distance": round(self.distance, 6)}


def write_interval_csv(records: Iterable[IntervalRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(IntervalRecord.CSV_COLUMNS)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


# ---------------------------------------------------------------------------
# monitors


class StreamMonitor:
    """Learning/working state machine for one stream."""

    def __init__(self, cfg: StreamMonitorConfig, nads_id: str = "nads"):
        self.cfg = cfg
        self.nads_id = nads_id
        self.training: List[MetricVector] = []
        self.model: Optional[MeanShiftModel] = None
        self.assessed = 0
        self.anomalies = 0

    @property
    def state(self) -> ModelState:
        return ModelState.LEARNING if self.model is None else ModelState.WORKING

    def observe(self, vector: MetricVector, skip: bool = False) -> IntervalRecord:
        if self.model is None:
            self.training.append(vector)
            if len(self.training) >= self.cfg.learning_intervals:
                self.model = MeanShiftModel.train(self.training, self.cfg)
            return IntervalRecord(self.nads_id, self.cfg.id, vector, Verdict.LEARNING)
        v = self.model.normalize(vector)
        if skip:
            return IntervalRecord(self.nads_id, self.cfg.id, v, Verdict.SKIPPED)
        result = assess(v, self.model)
        self.assessed += 1
        if result.verdict is Verdict.ANOMALY:
            self.anomalies += 1
        return IntervalRecord(self.nads_id, self.cfg.id, v, result.verdict, result.distance)

    def interval(self, index: int, times_us, sizes, skip: bool = False) -> IntervalRecord:
        return self.observe(compute_raw(times_us, sizes, self.cfg, index), skip)


class NadsInstance:
    """A NADS node: a set of pairwise non-overlapping stream monitors."""

    def __init__(self, id: str, monitors: Sequence[StreamMonitorConfig], drop_probability: float = 0.0):
        check_monitors([m.stream for m in monitors])
        if not 0.0 <= drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")
        self.id = id
        self.monitors: Dict[str, StreamMonitor] = {m.id: StreamMonitor(m, id) for m in monitors}
        self.drop_probability = drop_probability
        self._keys = [m.stream for m in monitors]
        self._by_key = {m.stream: m.id for m in monitors}
        self._route: Dict[tuple, Optional[str]] = {}

    def monitor_for(self, frame: EthernetFrame) -> Optional[str]:
        key = frame.header()
        if key not in self._route:
            hit = stream_key_of(frame, self._keys)
            self._route[key] = None if hit is None else self._by_key[hit]
        return self._route[key]


def run_pipeline(frames: Iterable[EthernetFrame], cfgs: Sequence[StreamMonitorConfig],
                 nads_id: str = "nads", processing_us: int = 0
                 ) -> Tuple[List[AnomalyReport], List[IntervalRecord]]:
    """Offline pipeline over a recorded mirror trace.

    Intervals run from index 0 up to the last interval holding a frame; each
    report is stamped at interval close plus ``processing_us``.
    """
    inst = NadsInstance(nads_id, cfgs)
    binned: Dict[str, Dict[int, Tuple[List[int], List[int]]]] = {c.id: {} for c in cfgs}
    last = -1
    for f in frames:
        mid = inst.monitor_for(f)
        if mid is None:
            continue
        cfg = inst.monitors[mid].cfg
        idx = f.timestamp // cfg.interval_us
        t, s = binned[mid].setdefault(idx, ([], []))
        t.append(f.timestamp)
        s.append(f.payload_len)
        last = max(last, f.timestamp)
    reports: List[AnomalyReport] = []
    records: List[IntervalRecord] = []
    for cfg in cfgs:
        mon = inst.monitors[cfg.id]
        if last < 0:
            continue
        for idx in range(last // cfg.interval_us + 1):
            t, s = binned[cfg.id].get(idx, ([], []))
            rec = mon.interval(idx, t, s)
            records.append(rec)
            if rec.verdict is Verdict.ANOMALY:
                close = (idx + 1) * cfg.interval_us
                reports.append(AnomalyReport(close + processing_us, nads_id, cfg.id, cfg.stream,
                                             idx, rec.vector, rec.distance))
    return reports, records

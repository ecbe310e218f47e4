"""Traffic sources and attack injectors.

A source produces its frames chunk by chunk: chunk ``k`` holds every frame
whose nominal send time falls in ``[k * chunk_us, (k + 1) * chunk_us)``.
Each chunk draws from its own seeded generator, so chunks can be built in
any order with identical results.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..dataplane import FrameBatch
from ..netmodel import (
    IPPROTO_ICMP, IPPROTO_TCP, EthernetFrame, Node, RawBytes, ScanProbe, VideoChunk,
)

MIN_UDP_PAYLOAD = 18  # 46-byte minimum Ethernet payload minus IPv4 and UDP headers


class EmptySlice(ValueError):
    pass


def chunk_rng(seed: int, source_id: str, chunk: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(source_id.encode()), int(chunk)])


@dataclass(frozen=True)
class Source:
    """Base class. ``entry`` is the node the frames leave from."""

    id: str
    entry: str
    template: EthernetFrame
    start_us: int = 0
    stop_us: Optional[int] = None
    tag: str = ""

    @property
    def label(self) -> str:
        return self.tag or self.id

    def span(self, lo: int, hi: int) -> Tuple[int, int]:
        lo = max(lo, self.start_us)
        if self.stop_us is not None:
            hi = min(hi, self.stop_us)
        return lo, hi

    def end_us(self) -> Optional[int]:
        return self.stop_us

    def batches(self, lo: int, hi: int, seed: int, chunk: int) -> List[FrameBatch]:
        raise NotImplementedError


@dataclass(frozen=True)
class PeriodicSource(Source):
    """Fixed-size frames every ``period_us``; optional gaussian send jitter
    with sigma ``jitter_frac * period``, clipped to half a period."""

    period_us: int = 10_000
    size: int = 0
    jitter_frac: float = 0.0

    def __post_init__(self):
        if self.period_us <= 0:
            raise ValueError("period must be > 0")

    def batches(self, lo, hi, seed, chunk):
        lo, hi = self.span(lo, hi)
        if hi <= lo:
            return []
        p = self.period_us
        n0 = -((self.start_us - lo) // p)  # ceil((lo - start) / p)
        n1 = -((self.start_us - hi) // p)
        if n1 <= n0:
            return []
        times = self.start_us + np.arange(n0, n1, dtype=np.int64) * p
        if self.jitter_frac > 0:
            rng = chunk_rng(seed, self.id, chunk)
            jit = rng.normal(0.0, self.jitter_frac * p, times.size)
            jit = np.clip(np.rint(jit), -(p // 2), p // 2).astype(np.int64)
            times = np.sort(np.maximum(times + jit, 0))
        size = self.size or self.template.payload_len
        return [FrameBatch(self.template, times, np.full(times.size, size, dtype=np.int64), self.label)]


@dataclass(frozen=True)
class VideoSource(Source):
    """Camera stream: one encoded frame per ``1/fps`` second split into
    ``mtu_payload``-byte packets sent ``pacing_us`` apart. Every ``gop``-th
    frame is an I-frame."""

    fps: int = 25
    gop: int = 25
    i_frame_bytes: int = 40_000
    p_frame_bytes: int = 8_000
    mtu_payload: int = 1316
    pacing_us: int = 100

    @property
    def frame_period_us(self) -> int:
        return 1_000_000 // self.fps

    def _packets(self, nbytes: int) -> np.ndarray:
        full, rest = divmod(nbytes, self.mtu_payload)
        sizes = [self.mtu_payload] * full + ([rest] if rest else [])
        return np.array(sizes, dtype=np.int64)

    def batches(self, lo, hi, seed, chunk):
        lo, hi = self.span(lo, hi)
        if hi <= lo:
            return []
        p = self.frame_period_us
        n0 = -((self.start_us - lo) // p)
        n1 = -((self.start_us - hi) // p)
        if n1 <= n0:
            return []
        i_pk = self._packets(self.i_frame_bytes)
        p_pk = self._packets(self.p_frame_bytes)
        times, sizes = [], []
        for n in range(n0, n1):
            pk = i_pk if n % self.gop == 0 else p_pk
            t = self.start_us + n * p
            times.append(t + np.arange(pk.size, dtype=np.int64) * self.pacing_us)
            sizes.append(pk)
        return [FrameBatch(self.template, np.concatenate(times), np.concatenate(sizes), self.label)]


@dataclass(frozen=True)
class DosSource(Source):
    """Flood with deterministic spacing: frame ``i`` leaves at
    ``start + floor(i * step)`` for ``i < count``, where step = 1/rate."""

    count: int = 0
    step_num: int = 1  # step in microseconds = step_num / step_den
    step_den: int = 1
    size: int = MIN_UDP_PAYLOAD

    @classmethod
    def from_rate(cls, id: str, entry: str, template: EthernetFrame, start_us: int,
                  rate_pps, duration_us: int, size: int = MIN_UDP_PAYLOAD, tag: str = "") -> "DosSource":
        rate = Fraction(str(rate_pps))
        if rate <= 0 or duration_us <= 0:
            raise ValueError("DoS rate and duration must be > 0")
        count = int(rate * duration_us / 1_000_000)
        step = Fraction(1_000_000) / rate
        return cls(id, entry, template, start_us, None, tag, count, step.numerator, step.denominator, size)

    @classmethod
    def from_total(cls, id: str, entry: str, template: EthernetFrame, start_us: int,
                   total: int, duration_us: int, size: int = MIN_UDP_PAYLOAD, tag: str = "") -> "DosSource":
        if total <= 0 or duration_us <= 0:
            raise ValueError("DoS total and duration must be > 0")
        step = Fraction(duration_us, total)
        return cls(id, entry, template, start_us, None, tag, total, step.numerator, step.denominator, size)

    def time_of(self, i) -> np.ndarray:
        return self.start_us + (np.asarray(i, dtype=np.int64) * self.step_num) // self.step_den

    def end_us(self) -> Optional[int]:
        return int(self.time_of(self.count - 1)) + 1 if self.count else self.start_us

    def batches(self, lo, hi, seed, chunk):
        def first_at_or_after(t):
            x = t - self.start_us
            if x <= 0:
                return 0
            return -((-x * self.step_den) // self.step_num)

        i0 = min(first_at_or_after(lo), self.count)
        i1 = min(first_at_or_after(hi), self.count)
        if i1 <= i0:
            return []
        times = self.time_of(np.arange(i0, i1, dtype=np.int64))
        tmpl = replace(self.template, payload=RawBytes(), payload_len=self.size)
        return [FrameBatch(tmpl, times, np.full(times.size, self.size, dtype=np.int64), self.label)]


@dataclass(frozen=True)
class ProbeSource(Source):
    """Individually addressed frames, each with its own header."""

    probes: Tuple[Tuple[int, EthernetFrame], ...] = ()

    def end_us(self) -> Optional[int]:
        return max((t for t, _ in self.probes), default=self.start_us) + 1

    def batches(self, lo, hi, seed, chunk):
        out = []
        for t, frame in self.probes:
            if lo <= t < hi:
                out.append(FrameBatch(frame, np.array([t]), np.array([frame.payload_len]), self.label))
        return out


@dataclass(frozen=True)
class ReplaySource(Source):
    """Re-emits a recorded slice of another source, shifted to ``start_us``."""

    recorded: Optional[Source] = None
    slice_from_us: int = 0
    slice_to_us: int = 0

    def _slice(self, seed: int) -> List[FrameBatch]:
        return self.recorded.batches(self.slice_from_us, self.slice_to_us, seed, -1)

    def check(self, seed: int = 0) -> None:
        if not any(len(b) for b in self._slice(seed)):
            raise EmptySlice(f"replay {self.id}: no frames of {self.recorded.id} in the recorded slice")

    def end_us(self) -> Optional[int]:
        return self.start_us + (self.slice_to_us - self.slice_from_us) + 1

    def batches(self, lo, hi, seed, chunk):
        out = []
        shift = self.start_us - self.slice_from_us
        for b in self._slice(seed):
            moved = FrameBatch(b.template, b.times + shift, b.sizes, self.label)
            part = moved.split(lo)[1].split(hi)[0]
            if len(part):
                out.append(part)
        return out


# ---------------------------------------------------------------------------
# attack construction helpers


def scan_probes(attacker: Node, target: Node, ports: Sequence[int], start_us: int,
                spacing_us: int = 1_000, src_port: int = 40_000, ping: bool = True
                ) -> Tuple[Tuple[int, EthernetFrame], ...]:
    """One TCP SYN per port, plus an ICMP echo when ``ping`` is set."""
    out = []
    t = start_us
    base = EthernetFrame(0, attacker.mac, target.mac, ip_src=attacker.ip, ip_dst=target.ip)
    if ping:
        out.append((t, replace(base, ip_proto=IPPROTO_ICMP, payload=ScanProbe("icmp_echo"))))
        t += spacing_us
    for port in ports:
        out.append((t, replace(base, ip_proto=IPPROTO_TCP, l4_src=src_port, l4_dst=int(port),
                                payload=ScanProbe("tcp_syn"))))
        t += spacing_us
    return tuple(out)


def response_to(frame: EthernetFrame, responder: Node) -> Optional[EthernetFrame]:
    """Reply a host sends for a delivered probe, or ``None``."""
    probe = frame.payload
    if not isinstance(probe, ScanProbe) or probe.is_response or frame.ip_dst != responder.ip:
        return None
    if probe.probe == "icmp_echo":
        kind = "icmp_reply"
    else:
        kind = "tcp_synack" if frame.l4_dst in responder.open_ports else "tcp_rst"
    return replace(frame, src_mac=frame.dst_mac, dst_mac=frame.src_mac, ip_src=frame.ip_dst,
                   ip_dst=frame.ip_src, l4_src=frame.l4_dst, l4_dst=frame.l4_src,
                   payload=ScanProbe(kind), timestamp=frame.timestamp)


def inject_dos(source: DosSource) -> FrameBatch:
    """All frames of a flood as one batch."""
    parts = source.batches(source.start_us, source.end_us(), 0, 0)
    if not parts:
        return FrameBatch(source.template, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), source.label)
    return parts[0]


def inject_port_scan(source: ProbeSource) -> List[EthernetFrame]:
    return [f.at(t) for t, f in source.probes]


def inject_replay(source: ReplaySource, seed: int = 0) -> List[EthernetFrame]:
    source.check(seed)
    frames = []
    for b in source.batches(source.start_us, source.end_us(), seed, 0):
        frames.extend(b.frames())
    return sorted(frames, key=lambda f: f.timestamp)


def spoof_template(template: EthernetFrame, forged: Node) -> EthernetFrame:
    """Frame carrying another node's L2 and L3 source."""
    return replace(template, src_mac=forged.mac, ip_src=forged.ip)


def inject_spoof(source: Source, seed: int = 0) -> List[EthernetFrame]:
    frames = []
    end = source.end_us() or source.start_us
    for b in source.batches(source.start_us, end, seed, 0):
        frames.extend(b.frames())
    return sorted(frames, key=lambda f: f.timestamp)

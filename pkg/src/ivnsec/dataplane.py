"""Programmable switch model: flow tables, match-action processing, ingress
mirroring, packet-in generation and flow-mod application.

Frames can be processed one at a time (:func:`process_frame`) or as a
:class:`FrameBatch` of header-identical frames. A batch is forwarded as a
unit because the table cannot change while it is processed; the engine
guarantees that by splitting batches at table-change events.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .netmodel import EthernetFrame, ip_str, mac_str

VLAN_NONE = 0  # match value for untagged frames

STATIC_PRIORITY = 100
DYNAMIC_PRIORITY = 50

MATCH_FIELDS = (
    "in_port", "src_mac", "dst_mac", "vlan", "ethertype",
    "ip_src", "ip_dst", "ip_proto", "l4_src", "l4_dst",
)
MODIFIABLE_FIELDS = MATCH_FIELDS[1:]


class DataplaneError(Exception):
    pass


class DuplicateRuleId(DataplaneError):
    pass


class InvalidPort(DataplaneError):
    pass


class UnknownRule(DataplaneError):
    pass


def frame_field(frame: EthernetFrame, name: str, in_port: Optional[int] = None):
    if name == "in_port":
        return in_port
    value = getattr(frame, name)
    if name == "vlan" and value is None:
        return VLAN_NONE
    return value


@dataclass(frozen=True)
class FlowMatch:
    """Header pattern; ``None`` fields are wildcards."""

    in_port: Optional[int] = None
    src_mac: Optional[int] = None
    dst_mac: Optional[int] = None
    vlan: Optional[int] = None
    ethertype: Optional[int] = None
    ip_src: Optional[int] = None
    ip_dst: Optional[int] = None
    ip_proto: Optional[int] = None
    l4_src: Optional[int] = None
    l4_dst: Optional[int] = None

    @classmethod
    def exact(cls, frame: EthernetFrame, in_port: int) -> "FlowMatch":
        return cls(**{name: frame_field(frame, name, in_port) for name in MATCH_FIELDS})

    def matches(self, frame: EthernetFrame, in_port: Optional[int] = None) -> bool:
        for name in MATCH_FIELDS:
            want = getattr(self, name)
            if want is not None and frame_field(frame, name, in_port) != want:
                return False
        return True

    def wildcards(self) -> List[str]:
        return [name for name in MATCH_FIELDS if getattr(self, name) is None]

    @property
    def is_exact(self) -> bool:
        return not self.wildcards()

    def covers(self, other: "FlowMatch") -> bool:
        """True when every field set here is set to the same value in ``other``."""
        for name in MATCH_FIELDS:
            want = getattr(self, name)
            if want is not None and getattr(other, name) != want:
                return False
        return True

    def to_dict(self) -> dict:
        out = {}
        for name in MATCH_FIELDS:
            value = getattr(self, name)
            if value is None:
                continue
            if name in ("ip_src", "ip_dst"):
                value = ip_str(value)
            elif name in ("src_mac", "dst_mac"):
                value = mac_str(value)
            out[name] = value
        return out


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class Forward:
    out_ports: Tuple[int, ...]

    def __post_init__(self):
        if not self.out_ports:
            raise InvalidPort("Forward needs at least one out port")


@dataclass(frozen=True)
class Discard:
    pass


@dataclass(frozen=True)
class Modify:
    set_fields: Tuple[Tuple[str, object], ...]
    out_ports: Tuple[int, ...]

    def __post_init__(self):
        if not self.out_ports:
            raise InvalidPort("Modify needs at least one out port")
        for name, _ in self.set_fields:
            if name not in MODIFIABLE_FIELDS:
                raise ValueError(f"field {name!r} cannot be rewritten")

    def rewrite(self, frame: EthernetFrame) -> EthernetFrame:
        return replace(frame, **dict(self.set_fields))


@dataclass(frozen=True)
class ToController:
    pass


FlowAction = Union[Forward, Discard, Modify, ToController]


def action_to_dict(action: FlowAction) -> dict:
    if isinstance(action, Forward):
        return {"type": "forward", "out_ports": list(action.out_ports)}
    if isinstance(action, Modify):
        return {"type": "modify", "set": {k: v for k, v in action.set_fields},
                "out_ports": list(action.out_ports)}
    if isinstance(action, Discard):
        return {"type": "discard"}
    return {"type": "to_controller"}


class Origin(str, Enum):
    STATIC = "Static"
    DYNAMIC = "Dynamic"


@dataclass
class FlowRule:
    id: int
    priority: int
    match: FlowMatch
    action: FlowAction
    origin: Origin = Origin.STATIC
    packets: int = 0
    bytes: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "priority": self.priority,
            "origin": self.origin.value,
            "match": self.match.to_dict(),
            "action": action_to_dict(self.action),
            "counters": {"packets": self.packets, "bytes": self.bytes},
        }


# ---------------------------------------------------------------------------
# flow modifications


@dataclass(frozen=True)
class AddRule:
    rule: FlowRule
    mod_id: int = 0


@dataclass(frozen=True)
class RemoveRules:
    """Remove by id, or every rule whose match agrees with ``match`` on all of
    its set fields; ``origin`` restricts the removal to one rule origin."""

    rule_id: Optional[int] = None
    match: Optional[FlowMatch] = None
    origin: Optional[Origin] = None
    mod_id: int = 0

    def selects(self, rule: FlowRule) -> bool:
        if self.origin is not None and rule.origin is not self.origin:
            return False
        if self.rule_id is not None and rule.id != self.rule_id:
            return False
        if self.match is not None and not self.match.covers(rule.match):
            return False
        return True


@dataclass(frozen=True)
class ModifyRule:
    rule_id: int
    action: FlowAction
    mod_id: int = 0


FlowMod = Union[AddRule, RemoveRules, ModifyRule]


@dataclass(frozen=True)
class Ack:
    switch: str
    mod_id: int
    timestamp: int
    affected: int = 0


@dataclass(frozen=True)
class PacketIn:
    switch: str
    in_port: int
    frame: EthernetFrame
    timestamp: int


@dataclass
class FrameBatch:
    """Header-identical frames with per-frame timestamps and sizes."""

    template: EthernetFrame
    times: np.ndarray
    sizes: np.ndarray
    tag: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.sizes = np.asarray(self.sizes, dtype=np.int64)
        if self.times.shape != self.sizes.shape:
            raise ValueError("times and sizes differ in length")

    @classmethod
    def of(cls, frames: Sequence[EthernetFrame], tag: str = "") -> "FrameBatch":
        header = frames[0].header()
        if any(f.header() != header for f in frames):
            raise ValueError("batch frames must share one header")
        return cls(frames[0], np.array([f.timestamp for f in frames]),
                   np.array([f.payload_len for f in frames]), tag)

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def first(self) -> int:
        return int(self.times[0])

    @property
    def total_bytes(self) -> int:
        return int(self.sizes.sum())

    def frames(self) -> List[EthernetFrame]:
        return [replace(self.template, timestamp=int(t), payload_len=int(s))
                for t, s in zip(self.times, self.sizes)]

    def split(self, before: int) -> Tuple["FrameBatch", "FrameBatch"]:
        """Frames with time < ``before`` and the rest."""
        k = int(np.searchsorted(self.times, before, side="left"))
        return (FrameBatch(self.template, self.times[:k], self.sizes[:k], self.tag),
                FrameBatch(self.template, self.times[k:], self.sizes[k:], self.tag))

    def shifted(self, delta: int, template: Optional[EthernetFrame] = None) -> "FrameBatch":
        return FrameBatch(template or self.template, self.times + delta, self.sizes, self.tag)


@dataclass
class ProcessResult:
    rule: Optional[FlowRule]
    emitted: List[Tuple[int, EthernetFrame]]
    packet_in: Optional[PacketIn]
    mirrored: Optional[EthernetFrame]


@dataclass
class BatchResult:
    rule: Optional[FlowRule]
    emitted: List[Tuple[int, FrameBatch]]
    missed: Optional[FrameBatch]
    mirrored: Optional[FrameBatch]


# ---------------------------------------------------------------------------
# switch


@dataclass
class SwitchState:
    id: str
    ports: Dict[int, str]
    mirror_port: Optional[int] = None
    mirror_point: str = "ingress"
    table: List[FlowRule] = field(default_factory=list)
    packet_in_count: int = 0
    dropped: int = 0

    def __post_init__(self):
        if self.mirror_point not in ("ingress", "egress"):
            raise ValueError("mirror_point must be 'ingress' or 'egress'")
        self._sorted: Optional[List[FlowRule]] = None
        self._cache: Dict[Tuple, Optional[FlowRule]] = {}
        self._ids = {r.id for r in self.table}

    def _changed(self) -> None:
        self._sorted = None
        self._cache.clear()

    def rules(self) -> List[FlowRule]:
        if self._sorted is None:
            self._sorted = sorted(self.table, key=lambda r: (-r.priority, r.id))
        return self._sorted

    def rule(self, rule_id: int) -> FlowRule:
        for r in self.table:
            if r.id == rule_id:
                return r
        raise UnknownRule(f"no rule {rule_id} on {self.id}")

    def has_rule(self, rule_id: int) -> bool:
        return rule_id in self._ids

    def check_action(self, action: FlowAction) -> None:
        for p in getattr(action, "out_ports", ()):
            if p not in self.ports:
                raise InvalidPort(f"port {p} does not exist on {self.id}")

    def install(self, rule: FlowRule) -> None:
        if rule.id in self._ids:
            raise DuplicateRuleId(f"rule {rule.id} already on {self.id}")
        self.check_action(rule.action)
        self.table.append(rule)
        self._ids.add(rule.id)
        self._changed()

    def remove_where(self, selector) -> List[FlowRule]:
        gone = [r for r in self.table if selector(r)]
        if gone:
            self.table = [r for r in self.table if not selector(r)]
            self._ids = {r.id for r in self.table}
            self._changed()
        return gone

    def counters_total(self) -> int:
        return sum(r.packets for r in self.table)


def lookup(state: SwitchState, frame: EthernetFrame, in_port: int) -> Optional[FlowRule]:
    """Highest-priority matching rule (ties: lower id), or ``None`` on a miss."""
    if in_port not in state.ports:
        raise InvalidPort(f"port {in_port} does not exist on {state.id}")
    key = (frame.header(), in_port)
    try:
        return state._cache[key]
    except KeyError:
        pass
    hit = None
    for rule in state.rules():
        if rule.match.matches(frame, in_port):
            hit = rule
            break
    state._cache[key] = hit
    return hit


def _out(action: FlowAction) -> Tuple[Tuple[int, ...], Optional[Modify]]:
    if isinstance(action, Forward):
        return action.out_ports, None
    if isinstance(action, Modify):
        return action.out_ports, action
    return (), None


def process_frame(state: SwitchState, frame: EthernetFrame, in_port: int) -> ProcessResult:
    rule = lookup(state, frame, in_port)
    mirrored = frame if state.mirror_point == "ingress" and state.mirror_port is not None else None
    if rule is None or isinstance(rule.action, ToController):
        state.packet_in_count += 1
        if rule is not None:
            rule.packets += 1
            rule.bytes += frame.payload_len
        return ProcessResult(rule, [], PacketIn(state.id, in_port, frame, frame.timestamp), mirrored)
    rule.packets += 1
    rule.bytes += frame.payload_len
    ports, modify = _out(rule.action)
    state.check_action(rule.action)
    out_frame = modify.rewrite(frame) if modify else frame
    if not ports:
        state.dropped += 1
    emitted = [(p, out_frame) for p in ports]
    if state.mirror_point == "egress" and emitted and state.mirror_port is not None:
        mirrored = out_frame
    return ProcessResult(rule, emitted, None, mirrored)


def process_batch(state: SwitchState, batch: FrameBatch, in_port: int) -> BatchResult:
    """Batch form of :func:`process_frame`; the outcome equals processing each
    frame in order against the same table."""
    n = len(batch)
    rule = lookup(state, batch.template, in_port)
    mirrored = batch if state.mirror_point == "ingress" and state.mirror_port is not None else None
    if rule is None or isinstance(rule.action, ToController):
        state.packet_in_count += n
        if rule is not None:
            rule.packets += n
            rule.bytes += batch.total_bytes
        return BatchResult(rule, [], batch, mirrored)
    rule.packets += n
    rule.bytes += batch.total_bytes
    ports, modify = _out(rule.action)
    state.check_action(rule.action)
    if not ports:
        state.dropped += n
        return BatchResult(rule, [], None, mirrored)
    out = FrameBatch(modify.rewrite(batch.template), batch.times, batch.sizes, batch.tag) if modify else batch
    if state.mirror_point == "egress" and state.mirror_port is not None:
        mirrored = out
    return BatchResult(rule, [(p, out) for p in ports], None, mirrored)


def apply_flow_mod(state: SwitchState, mod: FlowMod, now: int = 0) -> Ack:
    """Apply one modification atomically. The returned ack carries ``now``;
    the engine adds the sampled switch latency when it schedules delivery."""
    if isinstance(mod, AddRule):
        state.install(mod.rule)
        affected = 1
    elif isinstance(mod, RemoveRules):
        affected = len(state.remove_where(mod.selects))
    elif isinstance(mod, ModifyRule):
        state.check_action(mod.action)
        rule = state.rule(mod.rule_id)
        rule.action = mod.action
        state._changed()
        affected = 1
    else:
        raise TypeError(f"unknown flow mod {mod!r}")
    return Ack(state.id, mod.mod_id, now, affected)


def dump_table_jsonl(state: SwitchState) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in state.rules())

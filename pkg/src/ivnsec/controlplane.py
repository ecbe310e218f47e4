"""SDN controller: static provisioning, ACL and whitelist handling of
packet-ins, violation logging, and countermeasure planning/execution."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .dataplane import (
    DYNAMIC_PRIORITY, STATIC_PRIORITY, Ack, AddRule, FlowMatch, FlowMod, FlowRule,
    Forward, Origin, PacketIn, RemoveRules, SwitchState, apply_flow_mod,
)
from .netmodel import (
    CommMatrixEntry, DomainTunnel, EthernetFrame, Topology, Unroutable, ip_str,
)

log = logging.getLogger(__name__)


class ControlPlaneError(Exception):
    pass


class UnroutableEntry(ControlPlaneError):
    pass


class PartialAck(ControlPlaneError):
    pass


# ---------------------------------------------------------------------------
# policy records


@dataclass(frozen=True)
class AclRule:
    """Deny predicate; ``None`` fields match anything. Port ranges are inclusive."""

    name: str
    switch: Optional[str] = None
    in_port: Optional[int] = None
    ip_src: Optional[int] = None
    ip_dst: Optional[int] = None
    ip_proto: Optional[int] = None
    l4_dst: Optional[Tuple[int, int]] = None
    l4_src: Optional[Tuple[int, int]] = None
    ip_src_not: Optional[int] = None  # deny any other source address

    def denies(self, switch: str, in_port: int, frame: EthernetFrame) -> bool:
        if self.switch is not None and switch != self.switch:
            return False
        if self.in_port is not None and in_port != self.in_port:
            return False
        for name in ("ip_src", "ip_dst", "ip_proto"):
            want = getattr(self, name)
            if want is not None and getattr(frame, name) != want:
                return False
        if self.ip_src_not is not None and frame.ip_src == self.ip_src_not:
            return False
        for name in ("l4_dst", "l4_src"):
            rng = getattr(self, name)
            if rng is not None:
                value = getattr(frame, name)
                if value is None or not rng[0] <= value <= rng[1]:
                    return False
        return True


@dataclass(frozen=True)
class WhitelistEntry:
    """Allowed communication between two nodes.

    Ports left as ``None`` accept any value; the installed rule is still an
    exact match on the triggering frame. ``bidirectional`` also installs
    the reverse flow so the destination can answer.
    """

    name: str
    src: str
    dst: str
    ip_proto: int
    l4_src: Optional[int] = None
    l4_dst: Optional[int] = None
    bidirectional: bool = False

    def admits(self, frame: EthernetFrame, topology: Topology) -> bool:
        src, dst = topology[self.src], topology[self.dst]
        if frame.ip_src != src.ip or frame.ip_dst != dst.ip or frame.ip_proto != self.ip_proto:
            return False
        if frame.src_mac != src.mac or frame.dst_mac != dst.mac:
            return False
        if self.l4_src is not None and frame.l4_src != self.l4_src:
            return False
        if self.l4_dst is not None and frame.l4_dst != self.l4_dst:
            return False
        return True


@dataclass(frozen=True)
class ViolationLog:
    timestamp: int
    switch: str
    in_port: int
    frame: dict
    rule: Optional[str]
    count: int = 1

    def to_dict(self) -> dict:
        return {"timestamp_us": self.timestamp, "switch": self.switch, "in_port": self.in_port,
                "frame": self.frame, "acl_rule": self.rule, "count": self.count}


# ---------------------------------------------------------------------------
# countermeasures


@dataclass(frozen=True)
class RemoveFlow:
    match: FlowMatch


@dataclass(frozen=True)
class DisableDynamic:
    pass


@dataclass(frozen=True)
class BlockSource:
    ip: int


@dataclass(frozen=True)
class FallbackStatic:
    pass


Countermeasure = Union[RemoveFlow, DisableDynamic, BlockSource, FallbackStatic]


def countermeasure_to_dict(cm: Countermeasure) -> dict:
    if isinstance(cm, RemoveFlow):
        return {"type": "remove_flow", "match": cm.match.to_dict()}
    if isinstance(cm, BlockSource):
        return {"type": "block_source", "ip": ip_str(cm.ip)}
    if isinstance(cm, FallbackStatic):
        return {"type": "fallback_static"}
    return {"type": "disable_dynamic"}


@dataclass
class CountermeasureResult:
    cm: Countermeasure
    frti_start: int
    frti_end: Optional[int]
    acks: List[Ack] = field(default_factory=list)
    missing: Tuple[str, ...] = ()

    @property
    def complete(self) -> bool:
        return not self.missing

    def raise_for_status(self) -> None:
        if self.missing:
            raise PartialAck(f"no ack from {', '.join(self.missing)}")

    @property
    def frti_us(self) -> Optional[int]:
        return None if self.frti_end is None else self.frti_end - self.frti_start


# ---------------------------------------------------------------------------
# decisions


@dataclass(frozen=True)
class InstallFlows:
    mods: Dict[str, Tuple[AddRule, ...]]
    packet_out: Tuple[int, ...]  # ports on the packet-in switch for the buffered frame


@dataclass(frozen=True)
class Drop:
    reason: str = "unknown"


@dataclass(frozen=True)
class DropAndLog:
    log: ViolationLog


Decision = Union[InstallFlows, Drop, DropAndLog]


# ---------------------------------------------------------------------------
# provisioning


class RuleIds:
    def __init__(self, start: int = 1):
        self.next = start

    def __call__(self) -> int:
        value = self.next
        self.next += 1
        return value


def _hops(topology: Topology, path: Sequence[str]) -> List[Tuple[str, int, int]]:
    """(switch, in_port, out_port) for every switch on the path."""
    hops = []
    for i in range(1, len(path) - 1):
        sw = path[i]
        hops.append((sw, topology.port_to(sw, path[i - 1]), topology.port_to(sw, path[i + 1])))
    return hops


def provision_static(matrix: Sequence[CommMatrixEntry], topology: Topology,
                     tunnels: Mapping[str, DomainTunnel],
                     ids: Optional[RuleIds] = None) -> Dict[str, List[FlowRule]]:
    """Exact-match static rules for every switch on each entry's route.

    Multicast entries get one rule per (switch, arrival port) whose out ports
    reach every other tunnel member.
    """
    ids = ids or RuleIds()
    tables: Dict[str, List[FlowRule]] = {sw: [] for sw in topology.switches}
    for entry in matrix:
        frame = entry.frame(topology, tunnels)
        targets = [m for m in tunnels[entry.dst].members if m != entry.src] if entry.tunnel else [entry.dst]
        per_hop: Dict[Tuple[str, int], List[int]] = {}
        for target in targets:
            try:
                path = topology.shortest_path(entry.src, target)
            except Unroutable as exc:
                raise UnroutableEntry(f"{entry.src} -> {target}: {exc}") from None
            for sw, in_port, out_port in _hops(topology, path):
                outs = per_hop.setdefault((sw, in_port), [])
                if out_port not in outs:
                    outs.append(out_port)
        for (sw, in_port), outs in per_hop.items():
            match = FlowMatch.exact(frame, in_port)
            tables[sw].append(FlowRule(ids(), STATIC_PRIORITY, match, Forward(tuple(sorted(outs))), Origin.STATIC))
    return tables


# ---------------------------------------------------------------------------
# controller


class Controller:
    """Controller state: policy, buffered decisions and issued countermeasures.

    The controller tracks the table contents it has requested so planning
    does not depend on in-flight acknowledgements.
    """

    def __init__(self, topology: Topology, switches: Mapping[str, SwitchState],
                 acl: Sequence[AclRule] = (), whitelist: Sequence[WhitelistEntry] = (),
                 tunnels: Optional[Mapping[str, DomainTunnel]] = None, log_unknown: bool = False,
                 first_dynamic_id: int = 100_000):
        self.topology = topology
        self.switches = dict(switches)
        self.acl: List[AclRule] = list(acl)
        self.whitelist: List[WhitelistEntry] = list(whitelist)
        self.tunnels = dict(tunnels or {})
        self.log_unknown = log_unknown
        self.fallback = False
        self.violations: List[ViolationLog] = []
        self.static_rules: Dict[str, List[FlowRule]] = {}
        self.version = 0
        self._dynamic_ids = RuleIds(first_dynamic_id)
        self._mod_ids = RuleIds(1)
        self._installed: Dict[Tuple[str, FlowMatch], int] = {}
        self._silent: Dict[Tuple, bool] = {}

    # -- state bookkeeping

    def _changed(self) -> None:
        self.version += 1
        self._silent.clear()

    def provision(self, matrix: Sequence[CommMatrixEntry]) -> Dict[str, List[FlowRule]]:
        tables = provision_static(matrix, self.topology, self.tunnels)
        for sw, rules in tables.items():
            for rule in rules:
                self.switches[sw].install(rule)
        self.static_rules = {sw: [replace(r, packets=0, bytes=0) for r in rules] for sw, rules in tables.items()}
        self._changed()
        return tables

    def next_mod_id(self) -> int:
        return self._mod_ids()

    # -- packet-in handling

    def acl_verdict(self, switch: str, in_port: int, frame: EthernetFrame) -> Optional[AclRule]:
        for rule in self.acl:
            if rule.denies(switch, in_port, frame):
                return rule
        return None

    def whitelist_hit(self, switch: str, in_port: int, frame: EthernetFrame) -> Optional[Tuple[WhitelistEntry, List[str]]]:
        for entry in self.whitelist:
            if not entry.admits(frame, self.topology):
                continue
            path = self.topology.shortest_path(entry.src, entry.dst)
            if switch in path[1:-1]:
                i = path.index(switch)
                if self.topology.port_to(switch, path[i - 1]) == in_port:
                    return entry, path
        return None

    def is_silent_drop(self, switch: str, in_port: int, frame: EthernetFrame) -> bool:
        """True when a packet-in for this frame would be dropped without any
        side effect under the current controller state."""
        key = (switch, in_port, frame.header())
        hit = self._silent.get(key)
        if hit is None:
            hit = (self.acl_verdict(switch, in_port, frame) is None
                   and not self.log_unknown
                   and (self.fallback or self.whitelist_hit(switch, in_port, frame) is None))
            self._silent[key] = hit
        return hit

    def handle_packet_in(self, pin: PacketIn, count: int = 1) -> Decision:
        denied = self.acl_verdict(pin.switch, pin.in_port, pin.frame)
        if denied is not None:
            entry = ViolationLog(pin.timestamp, pin.switch, pin.in_port, pin.frame.summary(), denied.name, count)
            self.violations.append(entry)
            return DropAndLog(entry)
        if self.fallback:
            return Drop("fallback")
        hit = self.whitelist_hit(pin.switch, pin.in_port, pin.frame)
        if hit is None:
            if self.log_unknown:
                entry = ViolationLog(pin.timestamp, pin.switch, pin.in_port, pin.frame.summary(), None, count)
                self.violations.append(entry)
                return DropAndLog(entry)
            return Drop("unknown")
        wl, path = hit
        mods: Dict[str, List[AddRule]] = {}
        packet_out: Tuple[int, ...] = ()
        flows = [(pin.frame, path)]
        if wl.bidirectional:
            flows.append((reverse_frame(pin.frame), list(reversed(path))))
        for frame, route in flows:
            for sw, in_port, out_port in _hops(self.topology, route):
                match = FlowMatch.exact(frame, in_port)
                if frame is pin.frame and sw == pin.switch:
                    packet_out = (out_port,)
                if (sw, match) in self._installed:
                    continue
                rule = FlowRule(self._dynamic_ids(), DYNAMIC_PRIORITY, match, Forward((out_port,)), Origin.DYNAMIC)
                self._installed[(sw, match)] = rule.id
                mods.setdefault(sw, []).append(AddRule(rule, self.next_mod_id()))
        if mods:
            self._changed()
        return InstallFlows({sw: tuple(m) for sw, m in sorted(mods.items())}, packet_out)

    # -- countermeasures

    def plan_countermeasure(self, cm: Countermeasure) -> Dict[str, List[FlowMod]]:
        """Flow-mods per targeted switch, and the controller-side state change."""
        plan: Dict[str, List[FlowMod]] = {}
        if isinstance(cm, RemoveFlow):
            selector = RemoveRules(match=cm.match)
        elif isinstance(cm, BlockSource):
            self.acl.insert(0, AclRule(f"block:{ip_str(cm.ip)}", ip_src=cm.ip))
            selector = RemoveRules(match=FlowMatch(ip_src=cm.ip), origin=Origin.DYNAMIC)
        else:
            if isinstance(cm, FallbackStatic):
                self.fallback = True
            selector = RemoveRules(origin=Origin.DYNAMIC)
        for sw in sorted(self.switches):
            state = self.switches[sw]
            if any(selector.selects(r) for r in state.table):
                plan[sw] = [replace(selector, mod_id=self.next_mod_id())]
        self._installed = {k: v for k, v in self._installed.items()
                           if not (k[0] in plan and self._selected(plan[k[0]], k[0], v))}
        self._changed()
        return plan

    def _selected(self, mods: Sequence[FlowMod], sw: str, rule_id: int) -> bool:
        state = self.switches[sw]
        if not state.has_rule(rule_id):
            return True
        rule = state.rule(rule_id)
        return any(isinstance(m, RemoveRules) and m.selects(rule) for m in mods)

    def rearm(self) -> None:
        """Accept whitelist installs again after a static fallback."""
        self.fallback = False
        self._changed()

    def apply_countermeasure(self, cm: Countermeasure, now: int = 0, dispatch_us: int = 0,
                             ack_us: Optional[Mapping[str, int]] = None,
                             unresponsive: Sequence[str] = ()) -> CountermeasureResult:
        """Synchronous execution: plan, apply on every targeted switch and
        collect acks. ``ack_us`` gives each switch's processing latency."""
        plan = self.plan_countermeasure(cm)
        result = CountermeasureResult(cm, now, None)
        missing = []
        end = now + dispatch_us
        for sw, mods in plan.items():
            if sw in unresponsive:
                missing.append(sw)
                continue
            t = now + dispatch_us + (ack_us or {}).get(sw, 0)
            for mod in mods:
                result.acks.append(apply_flow_mod(self.switches[sw], mod, t))
            end = max(end, t)
        result.missing = tuple(missing)
        result.frti_end = None if missing else end
        return result


def reverse_frame(frame: EthernetFrame) -> EthernetFrame:
    return replace(frame, src_mac=frame.dst_mac, dst_mac=frame.src_mac, ip_src=frame.ip_dst,
                   ip_dst=frame.ip_src, l4_src=frame.l4_dst, l4_dst=frame.l4_src)

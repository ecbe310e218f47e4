"""Scenario model and JSON loader.

A scenario file is checked in two passes: the JSON schema shipped in
``schema/scenario.schema.json`` and then cross-reference checks (node ids,
flows, monitors, tunnels). Every problem is reported with a JSON pointer.
"""

from __future__ import annotations

import fnmatch
import json
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import jsonschema
import numpy as np

from .acdc import (
    DecisionRule, FusionPolicy, NoOp, SdnCountermeasure, SetOperationMode, Stage,
)
from .controlplane import (
    AclRule, BlockSource, Countermeasure, DisableDynamic, FallbackStatic, RemoveFlow, WhitelistEntry,
)
from .dataplane import FlowMatch
from .latency import Constant, LatencyError, LatencyModel, Pert, parse_latency
from .nads import Metric, StreamMonitorConfig
from .netmodel import (
    AmbiguousMonitors, CanMessage, CommMatrixEntry, DomainTunnel, EthernetFrame, Link, Node,
    NodeKind, StreamKey, Topology, TopologyError, Unroutable, encapsulate_can, ip, protocol_number,
)
from .orchestrator import (
    ComputeNode, Criticality, NodeRole, OperationMode, ServiceApp, default_phase_models, PHASES,
)
from .simcore.traffic import (
    DosSource, PeriodicSource, ProbeSource, ReplaySource, Source, VideoSource, scan_probes,
    spoof_template, EmptySlice,
)

log = logging.getLogger(__name__)


class ScenarioInvalid(Exception):
    """Schema or cross-reference errors; ``errors`` holds (pointer, message)."""

    def __init__(self, errors: Sequence[Tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p or '/'}: {m}" for p, m in self.errors))


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class LatencyConfig:
    dispatch: LatencyModel = Pert.from_triple(7.0, 10.0, 19.0)
    ack: LatencyModel = Pert.from_triple(2.0, 5.0, 16.0)
    frti_budget_ms: float = 23.0
    controller_processing: LatencyModel = Constant(1.0)
    nads_processing: LatencyModel = Pert.from_triple(80.0, 113.0, 147.0)
    report_transit: LatencyModel = Constant(112.0)
    acdc_roundtrip: LatencyModel = Pert.from_triple(237.0, 379.0, 504.0)
    cloud_residual_ms: float = 435.0
    host_response: LatencyModel = Constant(0.05)
    realloc: Tuple[Tuple[str, LatencyModel], ...] = tuple(default_phase_models().items())

    def realloc_models(self) -> Dict[str, LatencyModel]:
        return dict(self.realloc)


@dataclass(frozen=True)
class CountermeasureSpec:
    type: str
    ip: Optional[int] = None

    def build(self, stream: Optional[StreamKey]) -> Countermeasure:
        if self.type == "remove_flow":
            if stream is None:
                raise ValueError("remove_flow needs a stream")
            return RemoveFlow(FlowMatch(ip_src=stream.ip_src, ip_dst=stream.ip_dst, ip_proto=stream.ip_proto,
                                        l4_src=stream.l4_src, l4_dst=stream.l4_dst))
        if self.type == "block_source":
            addr = self.ip if self.ip is not None else (stream.ip_src if stream else None)
            if addr is None:
                raise ValueError("block_source needs an address")
            return BlockSource(addr)
        if self.type == "fallback_static":
            return FallbackStatic()
        return DisableDynamic()


@dataclass(frozen=True)
class ControllerConfig:
    log_unknown: bool = False
    mirror_point: str = "ingress"
    ack_deadline_us: int = 100_000
    unresponsive_switches: Tuple[str, ...] = ()
    on_anomaly: Tuple[Tuple[str, CountermeasureSpec], ...] = ()


@dataclass(frozen=True)
class NadsConfig:
    id: str
    monitors: Tuple[StreamMonitorConfig, ...]
    drop_probability: float = 0.0


@dataclass(frozen=True)
class AcdcConfig:
    vehicle: str = "vehicle-0001"
    policy: FusionPolicy = FusionPolicy()
    rules: Tuple[DecisionRule, ...] = ()
    enabled: bool = True


@dataclass(frozen=True)
class OrchestratorConfig:
    nodes: Tuple[ComputeNode, ...] = ()
    services: Tuple[ServiceApp, ...] = ()
    modes: Tuple[Tuple[str, OperationMode], ...] = ()

    def mode(self, name: str) -> OperationMode:
        return dict(self.modes)[name]


@dataclass(frozen=True)
class AttackSpec:
    """Attack parameters; :meth:`build` turns them into a frame source for a seed."""

    id: str
    kind: str
    entry: str
    start_us: int
    params: Tuple[Tuple[str, Any], ...] = ()
    start_jitter_us: int = 0
    victim: Optional[str] = None
    measure: str = "local"

    def param(self, name: str, default=None):
        return dict(self.params).get(name, default)

    @property
    def tag(self) -> str:
        return f"attack:{self.id}"

    def start_for(self, seed: int) -> int:
        if self.start_jitter_us <= 0:
            return self.start_us
        from .latency import rng_stream
        return self.start_us + int(rng_stream(seed, f"attack-start:{self.id}").integers(0, self.start_jitter_us + 1))

    def build(self, scenario: "Scenario", seed: int) -> Source:
        topo = scenario.topology
        start = self.start_for(seed)
        if self.kind == "dos":
            tmpl = scenario.flow_frame(self.param("flow"))
            size = int(self.param("frame_size", 18))
            if self.param("total_frames") is not None:
                return DosSource.from_total(self.id, self.entry, tmpl, start, int(self.param("total_frames")),
                                            int(self.param("duration_us")), size, self.tag)
            return DosSource.from_rate(self.id, self.entry, tmpl, start, self.param("rate_pps"),
                                       int(self.param("duration_us")), size, self.tag)
        if self.kind == "port_scan":
            ports: List[int] = []
            for lo, hi in self.param("ports", ()):
                ports.extend(range(lo, hi + 1))
            probes = scan_probes(topo[self.entry], topo[self.param("target")], ports, start,
                                 int(self.param("spacing_us", 1000)), int(self.param("src_port", 40000)),
                                 bool(self.param("ping", True)))
            return ProbeSource(self.id, self.entry, probes[0][1] if probes else EthernetFrame(0, 0, 0),
                               start, None, self.tag, probes)
        if self.kind == "replay":
            recorded = scenario.source(self.param("source"))
            lo, hi = self.param("slice_us")
            src = ReplaySource(self.id, self.entry, recorded.template, start, None, self.tag, recorded, lo, hi)
            src.check(seed)
            return src
        if self.kind == "spoof":
            flow = scenario.flow_frame(self.param("flow"))
            tmpl = spoof_template(flow, topo[self.param("forged_src")])
            period = int(round(1e6 / float(self.param("rate_pps"))))
            stop = start + int(self.param("duration_us"))
            return PeriodicSource(self.id, self.entry, tmpl, start, stop, self.tag, period,
                                  int(self.param("frame_size", tmpl.payload_len or 64)))
        raise ValueError(f"unknown attack kind {self.kind}")


@dataclass(frozen=True)
class TrafficSpec:
    id: str
    kind: str
    flow: str
    params: Tuple[Tuple[str, Any], ...] = ()

    def param(self, name: str, default=None):
        return dict(self.params).get(name, default)


@dataclass
class Scenario:
    id: str
    topology: Topology
    duration_us: int
    description: str = ""
    seeds: Tuple[int, ...] = (0,)
    chunk_us: int = 1_000_000
    someip_ports: Tuple[int, ...] = ()
    tunnels: Dict[str, DomainTunnel] = field(default_factory=dict)
    matrix: List[CommMatrixEntry] = field(default_factory=list)
    flow_ids: Dict[str, int] = field(default_factory=dict)
    traffic: List[TrafficSpec] = field(default_factory=list)
    nads: List[NadsConfig] = field(default_factory=list)
    acl: List[AclRule] = field(default_factory=list)
    whitelist: List[WhitelistEntry] = field(default_factory=list)
    controller: ControllerConfig = ControllerConfig()
    latency: LatencyConfig = LatencyConfig()
    orchestrator: OrchestratorConfig = OrchestratorConfig()
    acdc: AcdcConfig = AcdcConfig()
    attacks: List[AttackSpec] = field(default_factory=list)
    ftti_budget_ms: Optional[float] = None
    expected: Dict[str, Any] = field(default_factory=dict)

    def flow(self, flow_id: str) -> CommMatrixEntry:
        return self.matrix[self.flow_ids[flow_id]]

    def flow_frame(self, flow_id: str) -> EthernetFrame:
        return self.flow(flow_id).frame(self.topology, self.tunnels)

    def flow_stream(self, flow_id: str) -> StreamKey:
        f = self.flow_frame(flow_id)
        return StreamKey(f.ip_src, f.ip_dst, f.ip_proto, f.l4_src, f.l4_dst)

    def source(self, traffic_id: str) -> Source:
        for spec in self.traffic:
            if spec.id == traffic_id:
                return build_traffic(self, spec)
        raise KeyError(traffic_id)

    def sources(self) -> List[Source]:
        return [build_traffic(self, spec) for spec in self.traffic]

    def with_log_unknown(self, value: bool = True) -> "Scenario":
        return replace(self, controller=replace(self.controller, log_unknown=value))


def build_traffic(scenario: Scenario, spec: TrafficSpec) -> Source:
    entry = scenario.flow(spec.flow)
    tmpl = scenario.flow_frame(spec.flow)
    start = int(spec.param("start_us", 0))
    stop = spec.param("stop_us")
    if spec.kind == "can":
        tunnel = scenario.tunnels[entry.dst]
        cycle_us = int(spec.param("cycle_us"))
        msg = CanMessage(int(spec.param("can_id")), bytes(int(spec.param("payload_len", 8))),
                         tunnel.domain, cycle_us / 1000.0)
        frame = encapsulate_can(msg, tunnel, scenario.topology[entry.src], l4_src=entry.l4_src)
        frame = replace(frame, vlan=tmpl.vlan)
        return PeriodicSource(spec.id, entry.src, frame, start + int(spec.param("phase_us", 0)), stop, spec.id,
                              cycle_us, frame.payload_len, float(spec.param("jitter_frac", 0.0)))
    if spec.kind == "periodic":
        size = int(spec.param("size", 64))
        frame = replace(tmpl, payload_len=size)
        return PeriodicSource(spec.id, entry.src, frame, start + int(spec.param("phase_us", 0)), stop, spec.id,
                              int(spec.param("period_us")), size, float(spec.param("jitter_frac", 0.0)))
    if spec.kind == "video":
        from .netmodel import VideoChunk
        frame = replace(tmpl, payload=VideoChunk())
        return VideoSource(spec.id, entry.src, frame, start + int(spec.param("phase_us", 0)), stop, spec.id,
                           int(spec.param("fps", 25)), int(spec.param("gop", 25)),
                           int(spec.param("i_frame_bytes", 40_000)), int(spec.param("p_frame_bytes", 8_000)),
                           int(spec.param("mtu_payload", 1316)), int(spec.param("pacing_us", 100)))
    raise ValueError(f"unknown traffic kind {spec.kind}")


# ---------------------------------------------------------------------------
# loading


def schema() -> dict:
    text = resources.files("ivnsec").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _ms(value) -> int:
    return int(round(float(value) * 1000))


def _s(value) -> int:
    return int(round(float(value) * 1_000_000))


def _mac(value) -> int:
    if isinstance(value, int):
        return value
    return int(value.replace(":", "").replace("-", ""), 16)


def _range(value) -> Optional[Tuple[int, int]]:
    if value is None:
        return None
    if isinstance(value, int):
        return (value, value)
    return (int(value[0]), int(value[1]))


class _Loader:
    def __init__(self, doc: dict):
        self.doc = doc
        self.errors: List[Tuple[str, str]] = []

    def err(self, pointer: str, message: str) -> None:
        self.errors.append((pointer, message))

    def load(self) -> Optional[Scenario]:
        d = self.doc
        topo = self.topology(d["topology"])
        if topo is None:
            return None
        scn = Scenario(id=d["id"], topology=topo, duration_us=_s(d["duration_s"]),
                       description=d.get("description", ""), seeds=tuple(d.get("seeds", [0])),
                       chunk_us=_ms(d.get("chunk_ms", 1000)),
                       someip_ports=tuple(d.get("someip_ports", ())),
                       ftti_budget_ms=d.get("ftti_budget_ms"), expected=d.get("expected", {}))
        self.tunnels(scn, d.get("tunnels", []))
        self.matrix(scn, d.get("matrix", []))
        self.traffic(scn, d.get("traffic", []))
        self.nads(scn, d.get("nads", []))
        self.acl(scn, d.get("acl", []))
        self.whitelist(scn, d.get("whitelist", []))
        self.controller(scn, d.get("controller", {}))
        self.latency(scn, d.get("latency", {}))
        self.orchestrator(scn, d.get("orchestrator", {}))
        self.acdc(scn, d.get("acdc", {}))
        self.attacks(scn, d.get("attacks", []))
        return scn

    # -- sections

    def topology(self, t: dict) -> Optional[Topology]:
        nodes = []
        ids = set()
        for i, n in enumerate(t["nodes"]):
            if n["id"] in ids:
                self.err(f"/topology/nodes/{i}/id", f"duplicate node id {n['id']}")
            ids.add(n["id"])
            nodes.append(Node(n["id"], NodeKind(n["kind"]), _mac(n.get("mac", 0)),
                              ip(n["ip"]) if n.get("ip") else None, tuple(n.get("open_ports", ()))))
        links = []
        for i, l in enumerate(t["links"]):
            for end in ("a", "b"):
                if l[end] not in ids:
                    self.err(f"/topology/links/{i}/{end}", f"unknown node {l[end]}")
            links.append(Link(l["a"], l["b"], int(l.get("latency_us", 100))))
        for sw, target in t.get("mirror_map", {}).items():
            if sw not in ids:
                self.err(f"/topology/mirror_map/{sw}", f"unknown switch {sw}")
            if target not in ids:
                self.err(f"/topology/mirror_map/{sw}", f"unknown NADS node {target}")
        if self.errors:
            return None
        try:
            topo = Topology(nodes, links, t.get("mirror_map", {}))
            topo.validate()
        except TopologyError as exc:
            self.err("/topology", str(exc))
            return None
        return topo

    def tunnels(self, scn: Scenario, items: list) -> None:
        seen_ips = {}
        for i, t in enumerate(items):
            p = f"/tunnels/{i}"
            for j, m in enumerate(t["members"]):
                if m not in scn.topology.nodes:
                    self.err(f"{p}/members/{j}", f"unknown node {m}")
                elif scn.topology[m].kind is not NodeKind.ZONE_CONTROLLER:
                    self.err(f"{p}/members/{j}", f"{m} is not a zone controller")
            if scn.someip_ports and t["udp_port"] not in scn.someip_ports:
                self.err(f"{p}/udp_port", f"port {t['udp_port']} is not a reserved SOME/IP port")
            try:
                tun = DomainTunnel(t["domain"], ip(t["multicast_ip"]), int(t["udp_port"]), tuple(t["members"]))
            except ValueError as exc:
                self.err(p, str(exc))
                continue
            if tun.multicast_ip in seen_ips:
                self.err(f"{p}/multicast_ip", f"address already used by domain {seen_ips[tun.multicast_ip]}")
            seen_ips[tun.multicast_ip] = tun.domain
            scn.tunnels[tun.domain] = tun

    def matrix(self, scn: Scenario, items: list) -> None:
        for i, e in enumerate(items):
            p = f"/matrix/{i}"
            if e["src"] not in scn.topology.nodes:
                self.err(f"{p}/src", f"unknown node {e['src']}")
                continue
            if "tunnel" in e:
                tun = scn.tunnels.get(e["tunnel"])
                if tun is None:
                    self.err(f"{p}/tunnel", f"unknown tunnel {e['tunnel']}")
                    continue
                if e["src"] not in tun.members:
                    self.err(f"{p}/src", f"{e['src']} is not a member of tunnel {tun.domain}")
                    continue
                dst, tunnel = tun.domain, True
                l4_dst = e.get("l4_dst", tun.udp_port)
                if l4_dst != tun.udp_port:
                    self.err(f"{p}/l4_dst", "tunneled flows must use the tunnel's UDP port")
                proto = protocol_number("udp")
            else:
                if e.get("dst") not in scn.topology.nodes:
                    self.err(f"{p}/dst", f"unknown node {e.get('dst')}")
                    continue
                dst, tunnel = e["dst"], False
                l4_dst = e["l4_dst"]
                proto = protocol_number(e["protocol"])
            src_node = scn.topology[e["src"]]
            if src_node.ip is None or (not tunnel and scn.topology[dst].ip is None):
                self.err(p, "flow endpoints need IP addresses")
                continue
            entry = CommMatrixEntry(e["src"], dst, proto, int(e["l4_src"]), int(l4_dst), e.get("vlan"),
                                    tunnel, e.get("direction", "tx"), e.get("description", ""))
            fid = e.get("id", f"flow{i}")
            if fid in scn.flow_ids:
                self.err(f"{p}/id", f"duplicate flow id {fid}")
            scn.flow_ids[fid] = len(scn.matrix)
            scn.matrix.append(entry)

    def traffic(self, scn: Scenario, items: list) -> None:
        seen = set()
        for i, t in enumerate(items):
            p = f"/traffic/{i}"
            if t["flow"] not in scn.flow_ids:
                self.err(f"{p}/flow", f"unknown flow {t['flow']}")
                continue
            if t["id"] in seen:
                self.err(f"{p}/id", f"duplicate traffic id {t['id']}")
            seen.add(t["id"])
            params = {}
            for key, value in t.items():
                if key in ("id", "kind", "flow"):
                    continue
                if key.endswith("_ms"):
                    params[key[:-3] + "_us"] = _ms(value)
                elif key.endswith("_s"):
                    params[key[:-2] + "_us"] = _s(value)
                else:
                    params[key] = value
            if t["kind"] == "can" and not scn.flow(t["flow"]).tunnel:
                self.err(f"{p}/flow", "CAN traffic must use a tunneled flow")
                continue
            scn.traffic.append(TrafficSpec(t["id"], t["kind"], t["flow"], tuple(sorted(params.items()))))

    def stream(self, scn: Scenario, m: dict, p: str) -> Optional[StreamKey]:
        if "flow" in m:
            if m["flow"] not in scn.flow_ids:
                self.err(f"{p}/flow", f"unknown flow {m['flow']}")
                return None
            return scn.flow_stream(m["flow"])
        s = m["stream"]
        return StreamKey(ip(s["ip_src"]) if s.get("ip_src") else None,
                         ip(s["ip_dst"]) if s.get("ip_dst") else None,
                         protocol_number(s.get("protocol")), s.get("l4_src"), s.get("l4_dst"))

    def nads(self, scn: Scenario, items: list) -> None:
        for i, n in enumerate(items):
            p = f"/nads/{i}"
            if n["id"] not in scn.topology.nodes or scn.topology[n["id"]].kind is not NodeKind.NADS:
                self.err(f"{p}/id", f"{n['id']} is not a NADS node")
                continue
            cfgs = []
            for j, m in enumerate(n.get("monitors", [])):
                mp = f"{p}/monitors/{j}"
                key = self.stream(scn, m, mp)
                if key is None:
                    continue
                bw = m.get("bandwidth", {})
                try:
                    cfgs.append(StreamMonitorConfig(
                        m["id"], key, Metric(m.get("metric_x", "FrameSize")), Metric(m.get("metric_y", "Bandwidth")),
                        _ms(m.get("interval_ms", 100)), int(m.get("learning_intervals", 100)),
                        _ms(m.get("nominal_cycle_ms", 0)), bw.get("fixed"), float(bw.get("factor", 3.0)),
                        float(bw.get("min", 0.05))))
                except ValueError as exc:
                    self.err(mp, str(exc))
            keys = [c.stream for c in cfgs]
            for a in range(len(keys)):
                for b in range(a + 1, len(keys)):
                    if keys[a].overlaps(keys[b]):
                        self.err(f"{p}/monitors/{b}",
                                 f"AmbiguousMonitors: overlaps monitor {cfgs[a].id}")
            scn.nads.append(NadsConfig(n["id"], tuple(cfgs), float(n.get("drop_probability", 0.0))))

    def _port(self, scn: Scenario, a: dict, p: str) -> Optional[int]:
        if "from" in a:
            sw = a.get("switch")
            if sw is None:
                self.err(p, "'from' needs 'switch'")
                return None
            try:
                return scn.topology.port_to(sw, a["from"])
            except KeyError:
                self.err(f"{p}/from", f"{a['from']} is not attached to {sw}")
                return None
        return a.get("in_port")

    def acl(self, scn: Scenario, items: list) -> None:
        for i, a in enumerate(items):
            p = f"/acl/{i}"
            if a.get("switch") is not None and a["switch"] not in scn.topology.switches:
                self.err(f"{p}/switch", f"unknown switch {a['switch']}")
                continue
            scn.acl.append(AclRule(
                a["name"], a.get("switch"), self._port(scn, a, p),
                ip(a["ip_src"]) if a.get("ip_src") else None, ip(a["ip_dst"]) if a.get("ip_dst") else None,
                protocol_number(a.get("protocol")), _range(a.get("l4_dst")), _range(a.get("l4_src")),
                ip(a["ip_src_not"]) if a.get("ip_src_not") else None))

    def whitelist(self, scn: Scenario, items: list) -> None:
        static = [e.frame(scn.topology, scn.tunnels) for e in scn.matrix]
        for i, w in enumerate(items):
            p = f"/whitelist/{i}"
            bad = [k for k in ("src", "dst") if w[k] not in scn.topology.nodes]
            for k in bad:
                self.err(f"{p}/{k}", f"unknown node {w[k]}")
            if bad:
                continue
            entry = WhitelistEntry(w["name"], w["src"], w["dst"], protocol_number(w["protocol"]),
                                   w.get("l4_src"), w.get("l4_dst"), bool(w.get("bidirectional", False)))
            for f in static:
                if entry.admits(f, scn.topology):
                    self.err(p, f"whitelist entry {entry.name} shadows a static flow")
                    break
            scn.whitelist.append(entry)

    def controller(self, scn: Scenario, c: dict) -> None:
        rules = []
        monitors = {m.id for n in scn.nads for m in n.monitors}
        for i, r in enumerate(c.get("on_anomaly", [])):
            if not any(fnmatch.fnmatchcase(m, r["monitor"]) for m in monitors):
                self.err(f"/controller/on_anomaly/{i}/monitor", f"no monitor matches {r['monitor']}")
            cm = r["countermeasure"]
            rules.append((r["monitor"], CountermeasureSpec(cm["type"], ip(cm["ip"]) if cm.get("ip") else None)))
        for i, sw in enumerate(c.get("unresponsive_switches", [])):
            if sw not in scn.topology.switches:
                self.err(f"/controller/unresponsive_switches/{i}", f"unknown switch {sw}")
        scn.controller = ControllerConfig(bool(c.get("log_unknown", False)), c.get("mirror_point", "ingress"),
                                          _ms(c.get("ack_deadline_ms", 100)),
                                          tuple(c.get("unresponsive_switches", ())), tuple(rules))

    def latency(self, scn: Scenario, l: dict) -> None:
        base = LatencyConfig()
        kw = {}
        for name in ("dispatch", "ack", "controller_processing", "nads_processing", "report_transit",
                     "acdc_roundtrip", "host_response"):
            if name in l:
                try:
                    kw[name] = parse_latency(l[name])
                except (LatencyError, KeyError) as exc:
                    self.err(f"/latency/{name}", str(exc))
        for name in ("frti_budget_ms", "cloud_residual_ms"):
            if name in l:
                kw[name] = float(l[name])
        if "realloc" in l:
            models = base.realloc_models()
            for phase, spec in l["realloc"].items():
                try:
                    models[phase] = parse_latency(spec)
                except (LatencyError, KeyError) as exc:
                    self.err(f"/latency/realloc/{phase}", str(exc))
            kw["realloc"] = tuple((p, models[p]) for p in PHASES)
        scn.latency = replace(base, **kw)

    def orchestrator(self, scn: Scenario, o: dict) -> None:
        nodes = tuple(ComputeNode(n["id"], NodeRole(n.get("role", "Worker")), int(n.get("capacity", 4)))
                      for n in o.get("nodes", []))
        node_ids = {n.id for n in nodes}
        services = []
        for i, s in enumerate(o.get("services", [])):
            if s.get("node") is not None and s["node"] not in node_ids:
                self.err(f"/orchestrator/services/{i}/node", f"unknown compute node {s['node']}")
            services.append(ServiceApp(s["id"], Criticality(s.get("criticality", "Optional")),
                                       tuple(s.get("allowed_nodes", ())), s.get("node")))
        modes = []
        for name, m in o.get("modes", {}).items():
            if m.get("fail_safe"):
                mode = OperationMode.fail_safe(services, m.get("targets", {}), name)
            else:
                mode = OperationMode.of(name, m.get("policy", {}), m.get("default", "keep"))
            for sid, target in mode.policy:
                if sid not in {s.id for s in services}:
                    self.err(f"/orchestrator/modes/{name}", f"unknown service {sid}")
                elif target not in ("Disabled", "any", "keep") and target not in node_ids:
                    self.err(f"/orchestrator/modes/{name}", f"unknown compute node {target}")
            modes.append((name, mode))
        scn.orchestrator = OrchestratorConfig(nodes, tuple(services), tuple(modes))

    def acdc(self, scn: Scenario, a: dict) -> None:
        fusion = a.get("fusion", {})
        rules = []
        modes = {name for name, _ in scn.orchestrator.modes}
        for i, r in enumerate(a.get("rules", [])):
            act = r["action"]
            if act["type"] == "set_operation_mode":
                if act["mode"] not in modes:
                    self.err(f"/acdc/rules/{i}/action/mode", f"unknown operation mode {act['mode']}")
                action = SetOperationMode(act["mode"])
            elif act["type"] == "sdn_countermeasure":
                cm = act["countermeasure"]
                if cm["type"] == "remove_flow":
                    built = RemoveFlow(self._flow_match(scn, cm, f"/acdc/rules/{i}/action"))
                elif cm["type"] == "block_source" and not cm.get("ip"):
                    self.err(f"/acdc/rules/{i}/action/countermeasure", "block_source needs 'ip'")
                    continue
                else:
                    built = CountermeasureSpec(cm["type"], ip(cm["ip"]) if cm.get("ip") else None).build(None)
                action = SdnCountermeasure(built)
            else:
                action = NoOp(True)
            rules.append(DecisionRule(r["match"], Stage(r.get("stage", "Containment")), action))
        scn.acdc = AcdcConfig(a.get("vehicle", "vehicle-0001"),
                              FusionPolicy(_ms(fusion.get("window_ms", 1000)), int(fusion.get("k", 1))),
                              tuple(rules), bool(a.get("enabled", True)))

    def _flow_match(self, scn: Scenario, cm: dict, p: str) -> FlowMatch:
        if cm.get("flow") not in scn.flow_ids:
            self.err(f"{p}/countermeasure/flow", f"unknown flow {cm.get('flow')}")
            return FlowMatch()
        s = scn.flow_stream(cm["flow"])
        return FlowMatch(ip_src=s.ip_src, ip_dst=s.ip_dst, ip_proto=s.ip_proto, l4_src=s.l4_src, l4_dst=s.l4_dst)

    def attacks(self, scn: Scenario, items: list) -> None:
        for i, a in enumerate(items):
            p = f"/attacks/{i}"
            if a["entry"] not in scn.topology.nodes:
                self.err(f"{p}/entry", f"unknown entry node {a['entry']}")
                continue
            if a.get("victim") is not None and a["victim"] not in scn.topology.nodes:
                self.err(f"{p}/victim", f"unknown victim node {a['victim']}")
            params: Dict[str, Any] = {}
            kind = a["kind"]
            if kind in ("dos", "spoof"):
                if a.get("flow") not in scn.flow_ids:
                    self.err(f"{p}/flow", f"unknown flow {a.get('flow')}")
                    continue
                params["flow"] = a["flow"]
                params["duration_us"] = _s(a["duration_s"])
                if "frame_size" in a:
                    params["frame_size"] = int(a["frame_size"])
            if kind == "dos":
                if "total_frames" in a:
                    params["total_frames"] = int(a["total_frames"])
                else:
                    params["rate_pps"] = a["rate_pps"]
            elif kind == "spoof":
                if a.get("forged_src") not in scn.topology.nodes:
                    self.err(f"{p}/forged_src", f"unknown node {a.get('forged_src')}")
                    continue
                if a["forged_src"] == a["entry"]:
                    self.err(f"{p}/forged_src", "forged source must differ from the attacker")
                params["forged_src"] = a["forged_src"]
                params["rate_pps"] = a.get("rate_pps", 10)
            elif kind == "port_scan":
                if a.get("target") not in scn.topology.nodes:
                    self.err(f"{p}/target", f"unknown target {a.get('target')}")
                    continue
                params.update(target=a["target"], ports=tuple(tuple(r) for r in a.get("ports", ())),
                              spacing_us=_ms(a.get("spacing_ms", 1)), src_port=a.get("src_port", 40000),
                              ping=a.get("ping", True))
            elif kind == "replay":
                if a.get("source") not in {t.id for t in scn.traffic}:
                    self.err(f"{p}/source", f"unknown traffic source {a.get('source')}")
                    continue
                params.update(source=a["source"], slice_us=(_s(a["slice_s"][0]), _s(a["slice_s"][1])))
            spec = AttackSpec(a.get("id", f"attack{i}"), kind, a["entry"], _s(a.get("start_s", 0)),
                              tuple(sorted(params.items())), _ms(a.get("start_jitter_ms", 0)),
                              a.get("victim"), a.get("measure", "local" if kind == "dos" else "none"))
            if kind == "replay":
                try:
                    spec.build(scn, 0)
                except EmptySlice as exc:
                    self.err(f"{p}/slice_s", f"EmptySlice: {exc}")
                    continue
            scn.attacks.append(spec)


def validate_document(doc: Any) -> List[Tuple[str, str]]:
    """All schema and cross-reference errors as (JSON pointer, message)."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = [(_pointer(e.absolute_path), e.message)
              for e in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))]
    if errors:
        return errors
    loader = _Loader(doc)
    try:
        loader.load()
    except (ValueError, KeyError, TopologyError, Unroutable, AmbiguousMonitors) as exc:
        loader.err("", f"{type(exc).__name__}: {exc}")
    return loader.errors


def load_document(doc: Any) -> Scenario:
    errors = validate_document(doc)
    if errors:
        raise ScenarioInvalid(errors)
    return _Loader(doc).load()


def read_document(path: Union[str, Path]) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_scenario(path: Union[str, Path]) -> Scenario:
    return load_document(read_document(path))


def validate(path: Union[str, Path]) -> List[Tuple[str, str]]:
    """Errors for a scenario file; empty when the file is valid."""
    try:
        doc = read_document(path)
    except json.JSONDecodeError as exc:
        return [("", f"invalid JSON: {exc}")]
    return validate_document(doc)


FIXTURES = ("static_provisioning", "regular_8h", "regular_8h_jitter", "local_dos", "cloud_dos",
            "port_scan", "port_scan_permissive")


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("ivnsec").joinpath(f"fixtures/{name}.json")))


def load_fixture(name: str) -> Scenario:
    return load_scenario(fixture_path(name))

"""Domain types for the in-vehicle network: frames, CAN messages, streams,
topology, and the CAN-over-SOME/IP multicast tunnel.

All records are immutable. Addresses and ports are plain integers; the
helpers :func:`ip` and :func:`ip_str` convert dotted quads for configs and
logs. Timestamps are integer microseconds of simulation time.
"""

from __future__ import annotations

import ipaddress
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

ETH_IPV4 = 0x0800
ETH_ARP = 0x0806

IPPROTO_ICMP = 1
IPPROTO_TCP = 6
IPPROTO_UDP = 17

PROTOCOLS = {"icmp": IPPROTO_ICMP, "tcp": IPPROTO_TCP, "udp": IPPROTO_UDP}
PROTOCOL_NAMES = {v: k for k, v in PROTOCOLS.items()}

SOMEIP_HEADER_LEN = 16
MAX_CAN_ID = 0x1FFFFFFF
MAX_CAN_PAYLOAD = 8


class NetModelError(Exception):
    pass


class NotAMember(NetModelError):
    """The sending zone controller is not subscribed to the domain tunnel."""


class NotTunneled(NetModelError):
    """The frame does not carry a tunneled CAN message."""


class AmbiguousMonitors(NetModelError):
    """Two stream monitors match the same frame."""


class TopologyError(NetModelError):
    pass


class Unroutable(TopologyError):
    pass


def ip(value: Union[str, int]) -> int:
    if isinstance(value, int):
        return value
    return int(ipaddress.IPv4Address(value))


def ip_str(value: Optional[int]) -> Optional[str]:
    if value is None:
        return None
    return str(ipaddress.IPv4Address(value))


def mac_str(value: Optional[int]) -> Optional[str]:
    if value is None:
        return None
    return ":".join(f"{(value >> s) & 0xFF:02x}" for s in range(40, -8, -8))


def is_multicast(addr: Optional[int]) -> bool:
    return addr is not None and (addr >> 28) == 0xE


def multicast_mac(group: int) -> int:
    """IPv4 multicast group to its 01:00:5e MAC (low 23 bits mapped)."""
    return 0x01005E000000 | (group & 0x7FFFFF)


def protocol_number(value: Union[str, int, None]) -> Optional[int]:
    if value is None or isinstance(value, int):
        return value
    try:
        return PROTOCOLS[value.lower()]
    except KeyError:
        raise ValueError(f"unknown protocol {value!r}") from None


# ---------------------------------------------------------------------------
# payload kinds


@dataclass(frozen=True)
class SomeIpTunnel:
    """SOME/IP container for one CAN message.

    The service carries the CAN domain and the cycle metadata so the receiving
    zone controller can rebuild the original message.
    """

    message_id: int
    can_payload: bytes
    domain: str = ""
    nominal_cycle_ms: float = 0.0

    @property
    def encoded_len(self) -> int:
        return SOMEIP_HEADER_LEN + len(self.can_payload)


@dataclass(frozen=True)
class VideoChunk:
    encoded_len: int = 0


@dataclass(frozen=True)
class RawBytes:
    encoded_len: int = 0


PROBE_REQUESTS = ("tcp_syn", "icmp_echo")
PROBE_RESPONSES = ("tcp_synack", "tcp_rst", "icmp_reply")


@dataclass(frozen=True)
class ScanProbe:
    probe: str = "tcp_syn"
    encoded_len: int = 0

    @property
    def is_response(self) -> bool:
        return self.probe in PROBE_RESPONSES


Payload = Union[SomeIpTunnel, VideoChunk, RawBytes, ScanProbe]


# ---------------------------------------------------------------------------
# CAN and Ethernet


@dataclass(frozen=True)
class CanMessage:
    can_id: int
    payload: bytes = b""
    domain: str = ""
    nominal_cycle_ms: float = 0.0  # 0 = event-driven

    def __post_init__(self):
        if not 0 <= self.can_id <= MAX_CAN_ID:
            raise ValueError(f"CAN id {self.can_id:#x} outside 29-bit range")
        if len(self.payload) > MAX_CAN_PAYLOAD:
            raise ValueError(f"CAN payload of {len(self.payload)} bytes exceeds 8")
        if self.nominal_cycle_ms < 0:
            raise ValueError("nominal cycle must be >= 0")


HEADER_FIELDS = (
    "src_mac", "dst_mac", "vlan", "ethertype",
    "ip_src", "ip_dst", "ip_proto", "l4_src", "l4_dst",
)


@dataclass(frozen=True)
class EthernetFrame:
    """Timestamped L2-L4 header record plus a payload descriptor."""

    timestamp: int
    src_mac: int
    dst_mac: int
    ethertype: int = ETH_IPV4
    vlan: Optional[int] = None
    ip_src: Optional[int] = None
    ip_dst: Optional[int] = None
    ip_proto: Optional[int] = None
    l4_src: Optional[int] = None
    l4_dst: Optional[int] = None
    payload_len: int = 0
    payload: Payload = field(default_factory=RawBytes)

    def __post_init__(self):
        has_l4 = self.l4_src is not None or self.l4_dst is not None
        if has_l4 and (self.ip_src is None or self.ip_dst is None or self.ip_proto is None):
            raise ValueError("L4 ports require IP headers")
        if self.vlan is not None and not 0 <= self.vlan < 4096:
            raise ValueError(f"vlan {self.vlan} outside 12-bit range")
        if self.payload_len < self.payload.encoded_len:
            raise ValueError("payload_len smaller than the encoded payload")

    def header(self) -> Tuple:
        """Hashable header tuple; frames with equal headers forward identically."""
        return (
            self.src_mac, self.dst_mac, self.vlan, self.ethertype, self.ip_src,
            self.ip_dst, self.ip_proto, self.l4_src, self.l4_dst, self.payload,
        )

    def at(self, timestamp: int) -> "EthernetFrame":
        return replace(self, timestamp=timestamp)

    def summary(self) -> dict:
        return {
            "src_mac": mac_str(self.src_mac),
            "dst_mac": mac_str(self.dst_mac),
            "vlan": self.vlan,
            "ip_src": ip_str(self.ip_src),
            "ip_dst": ip_str(self.ip_dst),
            "ip_proto": PROTOCOL_NAMES.get(self.ip_proto, self.ip_proto),
            "l4_src": self.l4_src,
            "l4_dst": self.l4_dst,
            "kind": type(self.payload).__name__,
        }


STREAM_FIELDS = ("ip_src", "ip_dst", "ip_proto", "l4_src", "l4_dst")


@dataclass(frozen=True)
class StreamKey:
    """IP 5-tuple pattern; ``None`` fields are wildcards."""

    ip_src: Optional[int] = None
    ip_dst: Optional[int] = None
    ip_proto: Optional[int] = None
    l4_src: Optional[int] = None
    l4_dst: Optional[int] = None

    def matches(self, frame: EthernetFrame) -> bool:
        for name in STREAM_FIELDS:
            want = getattr(self, name)
            if want is not None and getattr(frame, name) != want:
                return False
        return True

    def overlaps(self, other: "StreamKey") -> bool:
        """True when some frame could match both keys."""
        for name in STREAM_FIELDS:
            a, b = getattr(self, name), getattr(other, name)
            if a is not None and b is not None and a != b:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "ip_src": ip_str(self.ip_src),
            "ip_dst": ip_str(self.ip_dst),
            "ip_proto": PROTOCOL_NAMES.get(self.ip_proto, self.ip_proto),
            "l4_src": self.l4_src,
            "l4_dst": self.l4_dst,
        }


def check_monitors(monitors: Sequence[StreamKey]) -> None:
    for i, a in enumerate(monitors):
        for b in monitors[i + 1:]:
            if a.overlaps(b):
                raise AmbiguousMonitors(f"monitors {a} and {b} overlap")


def stream_key_of(frame: EthernetFrame, monitors: Sequence[StreamKey]) -> Optional[StreamKey]:
    found = None
    for key in monitors:
        if key.matches(frame):
            if found is not None:
                raise AmbiguousMonitors(f"frame matches {found} and {key}")
            found = key
    return found


# ---------------------------------------------------------------------------
# topology


class NodeKind(str, Enum):
    ZONE_CONTROLLER = "ZoneController"
    SWITCH = "Switch"
    HPC = "HpcNode"
    ONLINE_GATEWAY = "OnlineGateway"
    CAMERA = "Camera"
    INFOTAINMENT = "Infotainment"
    SDN_CONTROLLER = "SdnController"
    NADS = "Nads"
    ACDC_EDGE = "AcdcEdge"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    mac: int = 0
    ip: Optional[int] = None
    open_ports: Tuple[int, ...] = ()

    @property
    def is_switch(self) -> bool:
        return self.kind is NodeKind.SWITCH


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    latency_us: int = 100


@dataclass(frozen=True)
class DomainTunnel:
    domain: str
    multicast_ip: int
    udp_port: int
    members: Tuple[str, ...]

    def __post_init__(self):
        if not is_multicast(self.multicast_ip):
            raise ValueError(f"{ip_str(self.multicast_ip)} is not a multicast address")
        if not 0 < self.udp_port < 65536:
            raise ValueError("udp port out of range")


class Topology:
    """Static IVN graph. Switch ports are numbered from 1 in link order."""

    def __init__(self, nodes: Iterable[Node], links: Iterable[Link],
                 mirror_map: Mapping[str, str]):
        self.nodes: Dict[str, Node] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise TopologyError(f"duplicate node {n.id}")
            self.nodes[n.id] = n
        self.links: List[Link] = list(links)
        self.mirror_map: Dict[str, str] = dict(mirror_map)
        self._adj: Dict[str, List[str]] = {n: [] for n in self.nodes}
        self._ports: Dict[str, Dict[int, str]] = {n: {} for n in self.nodes}
        self._port_of: Dict[Tuple[str, str], int] = {}
        self._latency: Dict[Tuple[str, str], int] = {}
        for link in self.links:
            for end in (link.a, link.b):
                if end not in self.nodes:
                    raise TopologyError(f"link references unknown node {end}")
            if (link.a, link.b) in self._latency:
                raise TopologyError(f"duplicate link {link.a}-{link.b}")
            for x, y in ((link.a, link.b), (link.b, link.a)):
                self._adj[x].append(y)
                port = len(self._ports[x]) + 1
                self._ports[x][port] = y
                self._port_of[(x, y)] = port
                self._latency[(x, y)] = link.latency_us
        self._by_ip = {n.ip: n for n in self.nodes.values() if n.ip is not None}

    # -- queries

    def __getitem__(self, node_id: str) -> Node:
        return self.nodes[node_id]

    @property
    def switches(self) -> List[str]:
        return sorted(n.id for n in self.nodes.values() if n.is_switch)

    def of_kind(self, kind: NodeKind) -> List[str]:
        return sorted(n.id for n in self.nodes.values() if n.kind is kind)

    def ports(self, node_id: str) -> Dict[int, str]:
        return self._ports[node_id]

    def port_to(self, node_id: str, neighbor: str) -> int:
        return self._port_of[(node_id, neighbor)]

    def peer(self, node_id: str, port: int) -> str:
        return self._ports[node_id][port]

    def latency(self, a: str, b: str) -> int:
        return self._latency[(a, b)]

    def neighbors(self, node_id: str) -> List[str]:
        return self._adj[node_id]

    def node_by_ip(self, addr: int) -> Optional[Node]:
        return self._by_ip.get(addr)

    def validate(self) -> None:
        if not self.nodes:
            raise TopologyError("empty topology")
        start = next(iter(sorted(self.nodes)))
        seen = {start}
        todo = deque([start])
        while todo:
            for nb in self._adj[todo.popleft()]:
                if nb not in seen:
                    seen.add(nb)
                    todo.append(nb)
        if len(seen) != len(self.nodes):
            raise TopologyError(f"graph not connected: {sorted(set(self.nodes) - seen)}")
        ctrls = self.of_kind(NodeKind.SDN_CONTROLLER)
        if len(ctrls) != 1:
            raise TopologyError(f"expected exactly one SdnController, found {len(ctrls)}")
        for sw in self.switches:
            target = self.mirror_map.get(sw)
            if target is None:
                raise TopologyError(f"switch {sw} has no mirror target")
            if target not in self.nodes or self.nodes[target].kind is not NodeKind.NADS:
                raise TopologyError(f"mirror target {target} of {sw} is not a NADS node")
            if (sw, target) not in self._port_of:
                raise TopologyError(f"no mirror link between {sw} and {target}")

    def mirror_port(self, switch: str) -> Optional[int]:
        target = self.mirror_map.get(switch)
        return self._port_of.get((switch, target)) if target else None

    def shortest_path(self, src: str, dst: str) -> List[str]:
        """Fewest-hop path whose interior nodes are switches.

        Ties resolve to the lexicographically smallest node-id sequence.
        """
        if src == dst:
            return [src]
        dist = {dst: 0}
        todo = deque([dst])
        while todo:
            cur = todo.popleft()
            if cur != dst and not self.nodes[cur].is_switch:
                continue
            for nb in self._adj[cur]:
                if nb not in dist:
                    dist[nb] = dist[cur] + 1
                    todo.append(nb)
        if src not in dist:
            raise Unroutable(f"no path from {src} to {dst}")
        path = [src]
        cur = src
        while cur != dst:
            options = sorted(
                nb for nb in self._adj[cur]
                if dist.get(nb) == dist[cur] - 1 and (nb == dst or self.nodes[nb].is_switch)
            )
            if not options:
                raise Unroutable(f"no path from {src} to {dst}")
            cur = options[0]
            path.append(cur)
        return path


# ---------------------------------------------------------------------------
# communication matrix


@dataclass(frozen=True)
class CommMatrixEntry:
    """One static flow of the native in-vehicle communication.

    ``dst`` is a node id, or the domain name of a tunnel when ``tunnel`` is set.
    """

    src: str
    dst: str
    ip_proto: int
    l4_src: int
    l4_dst: int
    vlan: Optional[int] = None
    tunnel: bool = False
    direction: str = "tx"
    description: str = ""

    def frame(self, topology: Topology, tunnels: Mapping[str, DomainTunnel],
              payload_len: int = 0, payload: Optional[Payload] = None) -> EthernetFrame:
        src = topology[self.src]
        if self.tunnel:
            tun = tunnels[self.dst]
            dst_ip, dst_mac = tun.multicast_ip, multicast_mac(tun.multicast_ip)
        else:
            node = topology[self.dst]
            dst_ip, dst_mac = node.ip, node.mac
        return EthernetFrame(
            timestamp=0, src_mac=src.mac, dst_mac=dst_mac, vlan=self.vlan,
            ip_src=src.ip, ip_dst=dst_ip, ip_proto=self.ip_proto,
            l4_src=self.l4_src, l4_dst=self.l4_dst, payload_len=payload_len,
            payload=payload if payload is not None else RawBytes(),
        )


# ---------------------------------------------------------------------------
# CAN <-> SOME/IP


def encapsulate_can(msg: CanMessage, tunnel: DomainTunnel, src: Node,
                    timestamp: int = 0, l4_src: Optional[int] = None) -> EthernetFrame:
    if src.id not in tunnel.members:
        raise NotAMember(f"{src.id} is not a member of tunnel {tunnel.domain}")
    body = SomeIpTunnel(msg.can_id, bytes(msg.payload), msg.domain, msg.nominal_cycle_ms)
    return EthernetFrame(
        timestamp=timestamp,
        src_mac=src.mac,
        dst_mac=multicast_mac(tunnel.multicast_ip),
        ip_src=src.ip,
        ip_dst=tunnel.multicast_ip,
        ip_proto=IPPROTO_UDP,
        l4_src=tunnel.udp_port if l4_src is None else l4_src,
        l4_dst=tunnel.udp_port,
        payload_len=body.encoded_len,
        payload=body,
    )


def decapsulate_can(frame: EthernetFrame) -> CanMessage:
    body = frame.payload
    if not isinstance(body, SomeIpTunnel):
        raise NotTunneled(f"payload kind {type(body).__name__} is not a SOME/IP tunnel")
    return CanMessage(body.message_id, body.can_payload, body.domain, body.nominal_cycle_ms)

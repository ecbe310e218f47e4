from dataclasses import replace

import networkx as nx
import pytest
from hypothesis import given, strategies as st

from ivnsec.controlplane import (
    AclRule, BlockSource, DisableDynamic, Drop, DropAndLog, FallbackStatic, InstallFlows, PartialAck,
    RemoveFlow, WhitelistEntry, provision_static, reverse_frame,
)
from ivnsec.dataplane import FlowMatch, Origin, PacketIn, apply_flow_mod, lookup, process_frame
from ivnsec.netmodel import IPPROTO_ICMP, IPPROTO_TCP, IPPROTO_UDP, CommMatrixEntry, EthernetFrame, ScanProbe

from tests.conftest import build_plane


def oracle_rule_counts(scn):
    """Count (switch, arrival port) pairs over all switch-interior shortest paths."""
    topo = scn.topology
    g = nx.Graph([(l.a, l.b) for l in topo.links])
    pairs = {sw: set() for sw in topo.switches}
    for entry in scn.matrix:
        targets = ([m for m in scn.tunnels[entry.dst].members if m != entry.src] if entry.tunnel else [entry.dst])
        flow_pairs = set()
        for t in targets:
            sub = g.subgraph(set(topo.switches) | {entry.src, t})
            for path in nx.all_shortest_paths(sub, entry.src, t):
                for i in range(1, len(path) - 1):
                    flow_pairs.add((path[i], path[i - 1]))
                break
        for sw, prev in flow_pairs:
            pairs[sw].add((entry.src, entry.dst, entry.l4_src, entry.l4_dst, entry.ip_proto, prev))
    return {sw: len(v) for sw, v in pairs.items()}


def test_static_counts_match_oracle_and_expected(static_scn):
    tables = provision_static(static_scn.matrix, static_scn.topology, static_scn.tunnels)
    counts = {sw: len(rules) for sw, rules in tables.items()}
    assert counts == oracle_rule_counts(static_scn)
    assert counts == {"sw1": 39, "sw2": 43}
    assert all(r.match.is_exact and r.origin is Origin.STATIC for rules in tables.values() for r in rules)


def test_empty_matrix(static_scn):
    tables = provision_static([], static_scn.topology, static_scn.tunnels)
    assert tables == {"sw1": [], "sw2": []}


def test_one_unicast_entry_two_switch_path(static_scn):
    entry = CommMatrixEntry("camera", "hpc2", IPPROTO_UDP, 5004, 5004)
    tables = provision_static([entry], static_scn.topology, static_scn.tunnels)
    topo = static_scn.topology
    g = nx.Graph([(l.a, l.b) for l in topo.links])
    switches_on_path = [n for n in nx.shortest_path(g, "camera", "hpc2") if topo[n].is_switch]
    assert sum(len(r) for r in tables.values()) == len(switches_on_path) == 2


def gw_frame(scn, dst="hpc1", proto=IPPROTO_TCP, port=22, payload=None):
    topo = scn.topology
    gw, d = topo["gateway"], topo[dst]
    return EthernetFrame(0, gw.mac, d.mac, ip_src=gw.ip, ip_dst=d.ip, ip_proto=proto,
                         l4_src=40000 if proto != IPPROTO_ICMP else None,
                         l4_dst=port if proto != IPPROTO_ICMP else None,
                         payload=payload or ScanProbe("tcp_syn" if proto == IPPROTO_TCP else "icmp_echo"))


def test_ping_is_dropped_and_logged(scan_scn):
    _, ctrl = build_plane(scan_scn)
    port = scan_scn.topology.port_to("sw1", "gateway")
    d = ctrl.handle_packet_in(PacketIn("sw1", port, gw_frame(scan_scn, proto=IPPROTO_ICMP), 5))
    assert isinstance(d, DropAndLog) and d.log.rule == "deny_icmp"
    assert ctrl.violations == [d.log]


def test_syn_probe_never_installs(scan_scn):
    _, ctrl = build_plane(scan_scn)
    port = scan_scn.topology.port_to("sw1", "gateway")
    for p in (22, 80, 8080, 50000):
        d = ctrl.handle_packet_in(PacketIn("sw1", port, gw_frame(scan_scn, port=p), 0))
        assert isinstance(d, (Drop, DropAndLog))


def test_unknown_traffic_silent_unless_log_unknown(scan_scn):
    port = scan_scn.topology.port_to("sw1", "gateway")
    f = gw_frame(scan_scn, port=8080)
    _, ctrl = build_plane(scan_scn)
    assert isinstance(ctrl.handle_packet_in(PacketIn("sw1", port, f, 0)), Drop)
    assert ctrl.is_silent_drop("sw1", port, f)
    _, ctrl = build_plane(scan_scn, log_unknown=True)
    d = ctrl.handle_packet_in(PacketIn("sw1", port, f, 0))
    assert isinstance(d, DropAndLog) and d.log.rule is None


def test_whitelisted_flow_installs_on_both_switches(static_scn):
    wl = WhitelistEntry("map_update", "hpc2", "gateway", IPPROTO_TCP, l4_dst=443)
    switches, ctrl = build_plane(static_scn, whitelist=[wl])
    topo = static_scn.topology
    hpc2, gw = topo["hpc2"], topo["gateway"]
    f = EthernetFrame(0, hpc2.mac, gw.mac, ip_src=hpc2.ip, ip_dst=gw.ip, ip_proto=IPPROTO_TCP,
                      l4_src=51000, l4_dst=443)
    port = topo.port_to("sw2", "hpc2")
    d = ctrl.handle_packet_in(PacketIn("sw2", port, f, 0))
    assert isinstance(d, InstallFlows)
    assert sorted(d.mods) == ["sw1", "sw2"]
    assert d.packet_out == (topo.port_to("sw2", "sw1"),)
    for sw, mods in d.mods.items():
        for m in mods:
            assert m.rule.origin is Origin.DYNAMIC and m.rule.match.is_exact
            apply_flow_mod(switches[sw], m)
    assert lookup(switches["sw2"], f, port).origin is Origin.DYNAMIC
    # a second packet-in for the same flow adds nothing
    again = ctrl.handle_packet_in(PacketIn("sw2", port, f, 1))
    assert isinstance(again, InstallFlows) and again.mods == {}


def test_acl_before_whitelist(static_scn):
    wl = WhitelistEntry("ping_ok", "gateway", "hpc1", IPPROTO_ICMP)
    _, ctrl = build_plane(static_scn, whitelist=[wl], acl=[AclRule("deny_icmp", ip_proto=IPPROTO_ICMP)])
    port = static_scn.topology.port_to("sw1", "gateway")
    d = ctrl.handle_packet_in(PacketIn("sw1", port, gw_frame(static_scn, proto=IPPROTO_ICMP), 0))
    assert isinstance(d, DropAndLog)


def video_match(scn):
    s = scn.flow_stream("video")
    return FlowMatch(ip_src=s.ip_src, ip_dst=s.ip_dst, ip_proto=s.ip_proto, l4_src=s.l4_src, l4_dst=s.l4_dst)


def test_remove_video_on_two_switches(static_scn):
    switches, ctrl = build_plane(static_scn)
    res = ctrl.apply_countermeasure(RemoveFlow(video_match(static_scn)), now=1000, dispatch_us=9000,
                                    ack_us={"sw1": 4000, "sw2": 6000})
    assert len(res.acks) == 2 and res.complete
    assert res.frti_us == 15000
    video = static_scn.flow_frame("video")
    for sw in ("sw1", "sw2"):
        for port in switches[sw].ports:
            assert lookup(switches[sw], video, port) is None


def test_disable_dynamic_without_dynamic_rules(static_scn):
    _, ctrl = build_plane(static_scn)
    res = ctrl.apply_countermeasure(DisableDynamic(), now=0, dispatch_us=1000)
    assert res.acks == [] and res.complete and res.frti_us == 1000


def test_partial_ack(static_scn):
    _, ctrl = build_plane(static_scn)
    res = ctrl.apply_countermeasure(RemoveFlow(video_match(static_scn)), unresponsive=("sw2",))
    assert res.missing == ("sw2",) and res.frti_us is None
    with pytest.raises(PartialAck):
        res.raise_for_status()


def test_block_source_extends_acl(scan_scn):
    _, ctrl = build_plane(scan_scn)
    gw = scan_scn.topology["gateway"]
    ctrl.apply_countermeasure(BlockSource(gw.ip))
    port = scan_scn.topology.port_to("sw1", "gateway")
    d = ctrl.handle_packet_in(PacketIn("sw1", port, gw_frame(scan_scn, port=8080), 0))
    assert isinstance(d, DropAndLog) and d.log.rule.startswith("block:")


def test_fallback_static_restores_provisioned_set(static_scn):
    wl = WhitelistEntry("map_update", "hpc2", "gateway", IPPROTO_TCP)
    switches, ctrl = build_plane(static_scn, whitelist=[wl])
    static_ids = {sw: {r.id for r in s.table} for sw, s in switches.items()}
    topo = static_scn.topology
    hpc2, gw = topo["hpc2"], topo["gateway"]
    f = EthernetFrame(0, hpc2.mac, gw.mac, ip_src=hpc2.ip, ip_dst=gw.ip, ip_proto=IPPROTO_TCP,
                      l4_src=51000, l4_dst=443)
    d = ctrl.handle_packet_in(PacketIn("sw2", topo.port_to("sw2", "hpc2"), f, 0))
    for sw, mods in d.mods.items():
        for m in mods:
            apply_flow_mod(switches[sw], m)
    ctrl.apply_countermeasure(FallbackStatic())
    assert {sw: {r.id for r in s.table} for sw, s in switches.items()} == static_ids
    assert isinstance(ctrl.handle_packet_in(PacketIn("sw2", topo.port_to("sw2", "hpc2"), f, 1)), Drop)


# -- properties ---------------------------------------------------------------

def _ingress_frames(scn):
    """Every provisioned flow at its first switch with its arrival port."""
    topo = scn.topology
    out = []
    for entry in scn.matrix:
        f = entry.frame(topo, scn.tunnels)
        sw = topo.neighbors(entry.src)[0]
        out.append((entry, sw, topo.port_to(sw, entry.src), f))
    return out


@given(st.data())
def test_remove_flow_safety_and_liveness(data):
    from tests.conftest import fixture
    scn = fixture("static_provisioning")
    flows = _ingress_frames(scn)
    target = data.draw(st.sampled_from(flows))
    switches, ctrl = build_plane(scn)
    before = {(sw, port, f.header()): (lookup(switches[sw], f, port) or None) for _, sw, port, f in flows}
    before = {k: (v.id if v else None) for k, v in before.items()}
    t = target[3]
    cm = RemoveFlow(FlowMatch(ip_src=t.ip_src, ip_dst=t.ip_dst, ip_proto=t.ip_proto, l4_src=t.l4_src, l4_dst=t.l4_dst))
    ctrl.apply_countermeasure(cm)
    for entry, sw, port, f in flows:
        hit = lookup(switches[sw], f, port)
        if cm.match.matches(f):
            # the stream is no longer emitted anywhere
            for s in switches.values():
                for p in s.ports:
                    assert process_frame(s, f, p).emitted == []
        else:
            assert (hit.id if hit else None) == before[(sw, port, f.header())]


@given(st.lists(st.sampled_from(["hpc1", "hpc2", "hpc3", "infotainment"]), min_size=1, max_size=4),
       st.lists(st.integers(1, 65535), min_size=1, max_size=5))
def test_whitelist_monotonicity(dsts, l4):
    from tests.conftest import fixture
    scn = fixture("static_provisioning")
    wl = [WhitelistEntry("a", "gateway", "hpc1", IPPROTO_TCP, l4_dst=8080, bidirectional=True),
          WhitelistEntry("b", "hpc2", "infotainment", IPPROTO_UDP)]
    _, ctrl = build_plane(scn, whitelist=wl)
    topo = scn.topology
    for dst in dsts:
        for port in l4:
            for src in ("gateway", "hpc2"):
                s, d = topo[src], topo[dst]
                proto = IPPROTO_TCP if src == "gateway" else IPPROTO_UDP
                f = EthernetFrame(0, s.mac, d.mac, ip_src=s.ip, ip_dst=d.ip, ip_proto=proto, l4_src=1234, l4_dst=port)
                sw = topo.neighbors(src)[0]
                dec = ctrl.handle_packet_in(PacketIn(sw, topo.port_to(sw, src), f, 0))
                if isinstance(dec, InstallFlows):
                    for mods in dec.mods.values():
                        for m in mods:
                            m_frame = EthernetFrame(0, m.rule.match.src_mac, m.rule.match.dst_mac,
                                                    ip_src=m.rule.match.ip_src, ip_dst=m.rule.match.ip_dst,
                                                    ip_proto=m.rule.match.ip_proto, l4_src=m.rule.match.l4_src,
                                                    l4_dst=m.rule.match.l4_dst)
                            assert any(e.admits(m_frame, topo) or (e.bidirectional and e.admits(reverse_frame(m_frame), topo))
                                       for e in wl)

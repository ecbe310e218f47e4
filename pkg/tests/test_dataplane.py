from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ivnsec.dataplane import (
    DYNAMIC_PRIORITY, STATIC_PRIORITY, AddRule, Discard, DuplicateRuleId, FlowMatch, FlowRule, FrameBatch,
    Forward, InvalidPort, Modify, ModifyRule, Origin, RemoveRules, SwitchState, ToController,
    apply_flow_mod, dump_table_jsonl, lookup, process_batch, process_frame,
)
from ivnsec.netmodel import IPPROTO_TCP, EthernetFrame, ScanProbe

MIRROR = 9


def frame(l4_dst=80, ts=0, size=64, src=1):
    return EthernetFrame(ts, src, 2, ip_src=10 + src, ip_dst=20, ip_proto=IPPROTO_TCP,
                         l4_src=1000, l4_dst=l4_dst, payload_len=size)


def switch(*rules, mirror_point="ingress"):
    state = SwitchState("s", {1: "a", 2: "b", 3: "c", MIRROR: "nads"}, MIRROR, mirror_point)
    for r in rules:
        state.install(r)
    return state


def exact_rule(rid, f, in_port, out, prio=STATIC_PRIORITY, origin=Origin.STATIC):
    return FlowRule(rid, prio, FlowMatch.exact(f, in_port), Forward((out,)), origin)


def test_lookup_exact_match_hit_and_miss(static_scn, plane):
    switches, _ = plane
    topo = static_scn.topology
    can = static_scn.flow_frame("can_chassis_fl")
    in_port = topo.port_to("sw1", "zc_fl")
    rule = lookup(switches["sw1"], can, in_port)
    assert rule is not None and rule.origin is Origin.STATIC
    assert rule.match.is_exact
    other = topo.port_to("sw1", "gateway")
    assert lookup(switches["sw1"], can, other) is None  # arrival port must match
    hpc1 = topo["hpc1"]
    probe = EthernetFrame(0, topo["gateway"].mac, hpc1.mac, ip_src=topo["gateway"].ip, ip_dst=hpc1.ip,
                          ip_proto=IPPROTO_TCP, l4_src=40000, l4_dst=7, payload=ScanProbe())
    assert lookup(switches["sw1"], probe, other) is None


def test_priority_order():
    f = frame()
    low = FlowRule(1, DYNAMIC_PRIORITY, FlowMatch(ip_dst=20), Forward((2,)), Origin.DYNAMIC)
    high = FlowRule(2, STATIC_PRIORITY, FlowMatch(l4_dst=80), Forward((3,)))
    assert lookup(switch(low, high), f, 1).id == 2


def test_equal_priority_ties_to_lower_id():
    f = frame()
    a = FlowRule(7, 100, FlowMatch(ip_dst=20), Forward((2,)))
    b = FlowRule(3, 100, FlowMatch(l4_dst=80), Forward((3,)))
    assert lookup(switch(a, b), f, 1).id == 3


def test_process_forward_counts_and_mirrors():
    f = frame()
    sw = switch(exact_rule(1, f, 1, 3))
    res = process_frame(sw, f, 1)
    assert res.emitted == [(3, f)]
    assert res.packet_in is None
    assert res.mirrored == f
    assert sw.rule(1).packets == 1 and sw.rule(1).bytes == 64


def test_process_miss():
    sw = switch()
    res = process_frame(sw, frame(), 1)
    assert res.emitted == [] and res.packet_in is not None and res.mirrored is not None
    assert sw.packet_in_count == 1


def test_process_discard():
    f = frame()
    sw = switch(FlowRule(1, 100, FlowMatch.exact(f, 1), Discard()))
    res = process_frame(sw, f, 1)
    assert res.emitted == [] and res.packet_in is None and res.mirrored == f


def test_to_controller_rule_raises_packet_in():
    f = frame()
    sw = switch(FlowRule(1, 100, FlowMatch(), ToController()))
    res = process_frame(sw, f, 1)
    assert res.packet_in is not None and sw.rule(1).packets == 1


def test_modify_rewrites():
    f = frame()
    sw = switch(FlowRule(1, 100, FlowMatch(), Modify((("vlan", 5),), (2,))))
    res = process_frame(sw, f, 1)
    assert res.emitted[0][1].vlan == 5


def test_egress_mirror_only_emitted():
    f = frame()
    sw = switch(FlowRule(1, 100, FlowMatch.exact(f, 1), Discard()), mirror_point="egress")
    assert process_frame(sw, f, 1).mirrored is None


def test_invalid_port_and_duplicate_id():
    f = frame()
    with pytest.raises(InvalidPort):
        switch(exact_rule(1, f, 1, 42))
    sw = switch(exact_rule(1, f, 1, 2))
    with pytest.raises(DuplicateRuleId):
        sw.install(exact_rule(1, f, 1, 2))
    with pytest.raises(InvalidPort):
        lookup(sw, f, 77)


def test_remove_video_flow_then_miss(static_scn, plane):
    switches, _ = plane
    topo = static_scn.topology
    video = static_scn.flow_frame("video")
    s = static_scn.flow_stream("video")
    match = FlowMatch(ip_src=s.ip_src, ip_dst=s.ip_dst, ip_proto=s.ip_proto, l4_src=s.l4_src, l4_dst=s.l4_dst)
    in_port = topo.port_to("sw1", "camera")
    assert lookup(switches["sw1"], video, in_port) is not None
    ack = apply_flow_mod(switches["sw1"], RemoveRules(match=match, mod_id=4), now=123)
    assert ack.affected == 1 and ack.mod_id == 4 and ack.timestamp == 123
    assert lookup(switches["sw1"], video, in_port) is None


def test_remove_nonexistent_is_noop():
    sw = switch(exact_rule(1, frame(), 1, 2))
    ack = apply_flow_mod(sw, RemoveRules(rule_id=99))
    assert ack.affected == 0 and len(sw.table) == 1


def test_add_then_lookup_and_modify():
    f = frame()
    sw = switch()
    apply_flow_mod(sw, AddRule(exact_rule(5, f, 1, 2)))
    assert lookup(sw, f, 1).id == 5
    apply_flow_mod(sw, ModifyRule(5, Forward((3,))))
    assert process_frame(sw, f, 1).emitted[0][0] == 3


def test_dump_is_json_lines():
    import json
    sw = switch(exact_rule(1, frame(), 1, 2))
    lines = dump_table_jsonl(sw).splitlines()
    assert json.loads(lines[0])["action"] == {"type": "forward", "out_ports": [2]}


# -- properties ---------------------------------------------------------------

ports = st.sampled_from([1, 2, 3])
dsts = st.sampled_from([22, 80, 443, 8080])
srcs = st.sampled_from([1, 2, 3])


@st.composite
def tables(draw):
    rules = []
    for rid in range(1, draw(st.integers(0, 8)) + 1):
        f = frame(l4_dst=draw(dsts), src=draw(srcs))
        kind = draw(st.sampled_from(["fwd", "discard", "wild"]))
        origin = draw(st.sampled_from(list(Origin)))
        prio = STATIC_PRIORITY if origin is Origin.STATIC else DYNAMIC_PRIORITY
        if kind == "fwd":
            rules.append(FlowRule(rid, prio, FlowMatch.exact(f, draw(ports)), Forward((draw(ports),)), origin))
        elif kind == "discard":
            rules.append(FlowRule(rid, prio, FlowMatch.exact(f, draw(ports)), Discard(), origin))
        else:
            rules.append(FlowRule(rid, prio, FlowMatch(l4_dst=f.l4_dst), Forward((2, 3)), origin))
    return rules


arrivals = st.lists(st.tuples(dsts, srcs, ports, st.integers(18, 1500)), max_size=40)


def fresh(rules):
    return switch(*[replace(r) for r in rules])


@given(tables(), arrivals)
def test_mirror_completeness_and_counter_consistency(rules, seq):
    sw = fresh(rules)
    mirrored = []
    for i, (dst, src, port, size) in enumerate(seq):
        f = frame(dst, ts=i, size=size, src=src)
        res = process_frame(sw, f, port)
        mirrored.append(res.mirrored)
    assert mirrored == [frame(d, ts=i, size=z, src=s) for i, (d, s, _, z) in enumerate(seq)]
    assert sw.counters_total() + sw.packet_in_count == len(seq)


@given(tables(), dsts, srcs, ports)
def test_lookup_deterministic(rules, dst, src, port):
    f = frame(dst, src=src)
    a, b = fresh(rules), fresh(rules)
    ra, rb = lookup(a, f, port), lookup(b, f, port)
    assert (ra and ra.id) == (rb and rb.id)
    assert (lookup(a, f, port) and lookup(a, f, port).id) == (ra and ra.id)


@given(tables(), st.lists(st.sampled_from([None, 22, 80, 443, 8080]), max_size=5))
def test_dynamic_removal_never_touches_static(rules, dsts_to_remove):
    sw = fresh(rules)
    static_before = {r.id for r in sw.table if r.origin is Origin.STATIC}
    for d in dsts_to_remove:
        apply_flow_mod(sw, RemoveRules(match=FlowMatch(l4_dst=d) if d else None, origin=Origin.DYNAMIC))
    assert {r.id for r in sw.table if r.origin is Origin.STATIC} == static_before


@given(tables(), dsts, srcs, ports, st.lists(st.integers(18, 1500), min_size=1, max_size=20))
def test_batch_equals_per_frame(rules, dst, src, port, sizes):
    a, b = fresh(rules), fresh(rules)
    frames = [frame(dst, ts=10 * i, size=z, src=src) for i, z in enumerate(sizes)]
    singles = [process_frame(a, f, port) for f in frames]
    res = process_batch(b, FrameBatch.of(frames, "t"), port)
    emitted = [(p, g) for s in singles for p, g in s.emitted]
    batch_emitted = sorted(((p, g) for p, out in res.emitted for g in out.frames()), key=lambda x: (x[1].timestamp, x[0]))
    assert sorted(emitted, key=lambda x: (x[1].timestamp, x[0])) == batch_emitted
    assert sum(s.packet_in is not None for s in singles) == (len(res.missed) if res.missed is not None else 0)
    assert [r.packets for r in a.table] == [r.packets for r in b.table]
    assert [r.bytes for r in a.table] == [r.bytes for r in b.table]
    assert a.packet_in_count == b.packet_in_count and a.dropped == b.dropped


def test_batch_split_and_shift():
    b = FrameBatch(frame(), np.array([1, 5, 9]), np.array([10, 20, 30]))
    head, tail = b.split(5)
    assert head.times.tolist() == [1] and tail.times.tolist() == [5, 9]
    assert b.shifted(100).times.tolist() == [101, 105, 109]
    with pytest.raises(ValueError):
        FrameBatch(frame(), np.array([1]), np.array([1, 2]))

"""Discrete-event engine.

Frames travel as batches of header-identical frames ("segments") parked at
a node. Tables and controller state only change inside events, so between
two events every segment can be moved hop by hop as a whole. Each round the
engine finds the horizon ``S``: the next queued event, or the earliest
moment a parked frame would itself create an event (a packet-in that is not
a side-effect-free drop, or a host reply to a probe). Every frame earlier
than ``S`` is then processed, the events due at ``S`` run, and the loop
repeats. All times are integer microseconds.
"""

from __future__ import annotations

import fnmatch
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..acdc import (
    ActuatorManager, NoOp, Outcome, SdnCountermeasure, SecuritySensorReport, SensorManager,
    SetOperationMode, StaleDirective, action_to_dict, backend_decide,
)
from ..controlplane import (
    Controller, DropAndLog, InstallFlows, countermeasure_to_dict,
)
from ..dataplane import (
    FrameBatch, Modify, PacketIn, SwitchState, ToController, apply_flow_mod, lookup, process_batch,
)
from ..latency import FlowModLatency, ms_to_us, rng_stream
from ..nads import AnomalyReport, IntervalRecord, NadsInstance, Verdict, compute_raw
from ..netmodel import NodeKind, Topology
from ..orchestrator import Orchestrator
from .events import INF, EventLog, EventQueue
from .traffic import Source, response_to

log = logging.getLogger(__name__)

ATTACK_PREFIX = "attack:"
RESPONSE_PREFIX = "response:"
PASSIVE_EVENTS = frozenset({"report", "sensor", "directive_rx", "ack", "cm_complete", "cm_deadline",
                            "realloc_start", "realloc_phase", "realloc_done"})


class SimulationError(RuntimeError):
    pass


@dataclass
class TagStats:
    injected: int = 0
    copies: int = 0
    delivered: int = 0
    dropped_switch: int = 0
    dropped_controller: int = 0
    in_flight: int = 0

    def to_dict(self) -> dict:
        return {"injected": self.injected, "extra_copies": self.copies, "delivered": self.delivered,
                "dropped_switch": self.dropped_switch, "dropped_controller": self.dropped_controller,
                "in_flight_at_end": self.in_flight,
                "balanced": self.injected + self.copies == self.delivered + self.dropped_switch
                + self.dropped_controller + self.in_flight}


@dataclass
class Delivery:
    count: int = 0
    first: int = INF
    last: int = -1


@dataclass
class CmState:
    id: int
    cm: Any
    issued: int
    targets: Tuple[str, ...]
    cause: dict
    acked: set = field(default_factory=set)
    done: bool = False


@dataclass
class RunResult:
    scenario: Any
    seed: int
    entries: List[dict]
    intervals: List[IntervalRecord]
    switches: Dict[str, SwitchState]
    stats: Dict[str, TagStats]
    deliveries: Dict[str, Dict[str, Delivery]]
    monitors: Dict[str, dict]
    extra: Dict[str, Any]


def path_latency(topology: Topology, a: str, b: str) -> int:
    if a == b:
        return 0
    if b in topology.neighbors(a):
        return topology.latency(a, b)
    path = topology.shortest_path(a, b)
    return sum(topology.latency(x, y) for x, y in zip(path, path[1:]))


class Engine:
    def __init__(self, scenario, seed: int = 0):
        self.scn = scenario
        self.seed = int(seed)
        self.topo: Topology = scenario.topology
        self.q = EventQueue()
        self.log = EventLog(self.q.next_seq)
        self.end = scenario.duration_us
        lat = scenario.latency
        self.lat = lat
        cc = scenario.controller
        self.switches = {sw: SwitchState(sw, dict(self.topo.ports(sw)), self.topo.mirror_port(sw), cc.mirror_point)
                         for sw in self.topo.switches}
        self.controller = Controller(self.topo, self.switches, scenario.acl, scenario.whitelist,
                                     scenario.tunnels, cc.log_unknown)
        self.controller.provision(scenario.matrix)
        self.ctrl_node = self.topo.of_kind(NodeKind.SDN_CONTROLLER)[0]
        self.ctrl_link = {sw: path_latency(self.topo, sw, self.ctrl_node) for sw in self.switches}
        edges = self.topo.of_kind(NodeKind.ACDC_EDGE)
        self.acdc_node = edges[0] if edges else None
        self.host_resp_us = ms_to_us(lat.host_response.mean)
        self.flowmod = FlowModLatency(lat.dispatch, lat.ack, lat.frti_budget_ms)
        self.rng = {name: rng_stream(self.seed, name)
                    for name in ("flowmod", "transit", "ctrl", "acdc", "realloc")}

        self.nads: Dict[str, NadsInstance] = {}
        self.nads_rng: Dict[str, Any] = {}
        for n in scenario.nads:
            self.nads[n.id] = NadsInstance(n.id, n.monitors, n.drop_probability)
            self.nads_rng[n.id] = (rng_stream(self.seed, f"nads-proc:{n.id}"), rng_stream(self.seed, f"nads-drop:{n.id}"))
        self.buffers: Dict[Tuple[str, str], List[Tuple[np.ndarray, np.ndarray, bool]]] = {}
        self.intervals: List[IntervalRecord] = []
        self.monitor_stats: Dict[str, dict] = {}

        oc = scenario.orchestrator
        self.orch = Orchestrator(oc.nodes, oc.services, lat.realloc_models()) if oc.nodes else None
        sensors = list(self.nads) + ["sdn_controller"]
        ac = scenario.acdc
        self.sensor_mgr = SensorManager(ac.vehicle, sensors, ac.policy) if ac.enabled and self.acdc_node else None
        self.actuator = ActuatorManager(ac.vehicle)
        self.open_jobs: Dict[str, int] = {}

        self.pending: Dict[tuple, Tuple[str, Optional[int], FrameBatch]] = {}
        self.stats: Dict[str, TagStats] = {}
        self.deliveries: Dict[str, Dict[str, Delivery]] = {}
        self.first_at_nads: Dict[str, Dict[str, int]] = {}
        self.cms: Dict[int, CmState] = {}
        self.handled_monitors: Dict[str, int] = {}
        self.report_ids = 0
        self.cm_ids = 0
        self._probe_cache: Dict[tuple, Optional[int]] = {}
        self._version = (0, 0)
        self._table_version = 0
        self._resp_cache: Dict[tuple, Any] = {}
        self.sources: List[Source] = []
        self.attack_sources: Dict[str, Any] = {}

    # ------------------------------------------------------------------ setup

    def _setup(self) -> None:
        for src in self.scn.sources():
            self.sources.append(src)
        for spec in self.scn.attacks:
            src = spec.build(self.scn, self.seed)
            self.sources.append(src)
            self.attack_sources[src.label] = (spec, src)
        for src in self.sources:
            self._schedule_chunk(src, src.start_us // self.scn.chunk_us)
        for nid, inst in self.nads.items():
            for interval in sorted({m.cfg.interval_us for m in inst.monitors.values()}):
                if interval <= self.end:
                    self.q.schedule(interval, "tick", (nid, interval, 1))
        for label, (spec, src) in self.attack_sources.items():
            last = src.end_us()
            self.log.add(src.start_us, "attack_start", {"attack": spec.id, "kind": spec.kind, "entry": spec.entry})
            if last is not None and last - 1 < self.end:
                self.log.add(last - 1, "attack_stop", {"attack": spec.id})

    def _schedule_chunk(self, src: Source, k: int) -> None:
        C = self.scn.chunk_us
        stop = src.end_us()
        limit = self.end if stop is None else min(self.end, stop)
        while k * C < limit + C:
            batches = [b for b in src.batches(k * C, (k + 1) * C, self.seed, k) if len(b)]
            if batches:
                t = min(b.first for b in batches)
                if t >= self.end:
                    return
                self.q.schedule(t, "chunk", (src, k, batches))
                return
            k += 1

    # ------------------------------------------------------------ bookkeeping

    def _tag(self, tag: str) -> TagStats:
        st = self.stats.get(tag)
        if st is None:
            st = self.stats[tag] = TagStats()
        return st

    def _park(self, node: str, in_port: Optional[int], batch: FrameBatch) -> tuple:
        key = (node, in_port, batch.template.header(), batch.tag)
        cur = self.pending.get(key)
        if cur is None:
            self.pending[key] = (node, in_port, batch)
        else:
            old = cur[2]
            times = np.concatenate([old.times, batch.times])
            sizes = np.concatenate([old.sizes, batch.sizes])
            if len(old) and len(batch) and batch.first < int(old.times[-1]):
                order = np.argsort(times, kind="stable")
                times, sizes = times[order], sizes[order]
            self.pending[key] = (node, in_port, FrameBatch(old.template, times, sizes, old.tag))
        return key

    def _emit_from(self, node: str, batch: FrameBatch) -> None:
        """Frames leaving ``node`` at their timestamps."""
        nb = self.topo.neighbors(node)[0]
        lat = self.topo.latency(node, nb)
        in_port = self.topo.port_to(nb, node) if self.topo[nb].is_switch else None
        self._park(nb, in_port, batch.shifted(lat))

    def _sync_version(self) -> None:
        v = (self._table_version, self.controller.version)
        if v != self._version:
            self._version = v
            self._probe_cache.clear()

    def _response(self, node: str, frame) -> Any:
        key = (node, frame.header())
        if key not in self._resp_cache:
            self._resp_cache[key] = response_to(frame, self.topo[node])
        return self._resp_cache[key]

    # ----------------------------------------------------------------- probe

    def _probe(self, node: str, in_port: Optional[int], tmpl, depth: int = 0) -> Optional[int]:
        """Offset from arrival at ``node`` to the first event the frame causes."""
        key = (node, in_port, tmpl.header())
        if key in self._probe_cache:
            return self._probe_cache[key]
        result: Optional[int] = None
        if depth > 64:
            raise SimulationError(f"forwarding loop at {node}")
        if self.topo[node].is_switch:
            state = self.switches[node]
            rule = lookup(state, tmpl, in_port)
            if rule is None or isinstance(rule.action, ToController):
                if not self.controller.is_silent_drop(node, in_port, tmpl):
                    result = self.ctrl_link[node]
            else:
                ports = getattr(rule.action, "out_ports", ())
                out = rule.action.rewrite(tmpl) if isinstance(rule.action, Modify) else tmpl
                for p in ports:
                    nb = state.ports[p]
                    nb_in = self.topo.port_to(nb, node) if self.topo[nb].is_switch else None
                    sub = self._probe(nb, nb_in, out, depth + 1)
                    if sub is not None:
                        cand = self.topo.latency(node, nb) + sub
                        result = cand if result is None else min(result, cand)
        elif self._response(node, tmpl) is not None:
            result = self.host_resp_us
        self._probe_cache[key] = result
        return result

    # --------------------------------------------------------------- advance

    def _advance(self, S: int) -> int:
        """Process every parked frame earlier than ``S``; returns frames moved."""
        moved = 0
        work = deque(k for k, v in self.pending.items() if v[2].first < S)
        while work:
            key = work.popleft()
            item = self.pending.pop(key, None)
            if item is None:
                continue
            node, in_port, batch = item
            if node in self.switches:
                rest, n, spawned = self._at_switch(node, in_port, batch, S)
            else:
                rest, n, spawned = self._at_host(node, batch, S)
            moved += n
            if rest is not None and len(rest):
                self._park(node, in_port, rest)
            for nk in spawned:
                if nk in self.pending and self.pending[nk][2].first < S:
                    work.append(nk)
        return moved

    def _at_switch(self, sw: str, in_port: int, batch: FrameBatch, S: int):
        state = self.switches[sw]
        tmpl = batch.template
        rule = lookup(state, tmpl, in_port)
        lc = self.ctrl_link[sw]
        silent = False
        if rule is None or isinstance(rule.action, ToController):
            silent = self.controller.is_silent_drop(sw, in_port, tmpl)
            limit = S - lc if silent else S - lc + 1
        else:
            limit = S
        take, rest = batch.split(limit)
        n = len(take)
        if n == 0:
            return rest, 0, []
        res = process_batch(state, take, in_port)
        if res.mirrored is not None:
            self._mirror(sw, res.mirrored)
        st = self._tag(batch.tag)
        spawned = []
        if res.missed is not None:
            if silent:
                st.dropped_controller += n
            else:
                times, starts = np.unique(take.times, return_index=True)
                bounds = list(starts[1:]) + [n]
                for t, a, b in zip(times, starts, bounds):
                    part = FrameBatch(tmpl, take.times[a:b], take.sizes[a:b], batch.tag)
                    self.q.schedule(int(t) + lc, "packet_in", (sw, in_port, part))
        elif not res.emitted:
            st.dropped_switch += n
        else:
            st.copies += (len(res.emitted) - 1) * n
            for port, out in res.emitted:
                nb = state.ports[port]
                nb_in = self.topo.port_to(nb, sw) if self.topo[nb].is_switch else None
                spawned.append(self._park(nb, nb_in, out.shifted(self.topo.latency(sw, nb))))
        return rest, n, spawned

    def _at_host(self, node: str, batch: FrameBatch, S: int):
        resp = self._response(node, batch.template)
        limit = S - self.host_resp_us + 1 if resp is not None else S
        take, rest = batch.split(limit)
        n = len(take)
        if n == 0:
            return rest, 0, []
        self._tag(batch.tag).delivered += n
        per = self.deliveries.setdefault(batch.tag, {})
        d = per.get(node)
        if d is None:
            d = per[node] = Delivery()
        d.count += n
        d.first = min(d.first, int(take.times[0]))
        d.last = max(d.last, int(take.times[-1]))
        if resp is not None:
            tag = RESPONSE_PREFIX + batch.tag
            for t in np.unique(take.times):
                t_out = int(t) + self.host_resp_us
                self.q.schedule(t_out, "host_response",
                                (node, FrameBatch(resp, np.array([t_out]), np.array([resp.payload_len]), tag)))
        return rest, n, []

    def _mirror(self, sw: str, batch: FrameBatch) -> None:
        nid = self.topo.mirror_map.get(sw)
        if nid is None:
            return
        arrival = batch.times + self.topo.latency(sw, nid)
        if batch.tag.startswith(ATTACK_PREFIX):
            firsts = self.first_at_nads.setdefault(batch.tag, {})
            firsts[nid] = min(firsts.get(nid, INF), int(arrival[0]))
        inst = self.nads.get(nid)
        if inst is None:
            return
        mid = inst.monitor_for(batch.template)
        if mid is None:
            return
        self.buffers.setdefault((nid, mid), []).append((arrival, batch.sizes, batch.tag.startswith(ATTACK_PREFIX)))

    # ------------------------------------------------------------------- run

    def run(self) -> RunResult:
        self._setup()
        stalls = 0
        while True:
            self._sync_version()
            P = self.end
            for node, in_port, batch in self.pending.values():
                off = self._probe(node, in_port, batch.template)
                if off is not None and batch.first + off < P:
                    P = batch.first + off
            handled = 0
            while self.q.peek_time() < P and self._passive(self.q.peek()):
                ev = self.q.pop()
                getattr(self, "_on_" + ev.kind)(ev.time, ev.payload)
                handled += 1
            if handled:
                continue
            S = min(self.q.peek_time(), P)
            moved = self._advance(S)
            while self.q.peek_time() <= S and self.q.peek_time() < self.end:
                ev = self.q.pop()
                getattr(self, "_on_" + ev.kind)(ev.time, ev.payload)
                handled += 1
                self._sync_version()
            if S >= self.end and self.q.peek_time() >= self.end:
                break
            if moved == 0 and handled == 0:
                stalls += 1
                if stalls > 3:
                    raise SimulationError(f"no progress at t={S}")
            else:
                stalls = 0
        return self._finish()

    def _passive(self, ev) -> bool:
        """True when handling ``ev`` neither reads frame state nor changes forwarding.

        Such an event at the queue head, earlier than every event a parked
        frame could cause, can run before the frames are advanced to it.
        """
        if ev.kind in PASSIVE_EVENTS:
            return True
        if ev.kind == "report_ctrl":
            report = ev.payload[1]
            if f"{report.nads_id}/{report.monitor}" in self.handled_monitors:
                return True
            return not any(fnmatch.fnmatchcase(report.monitor, p) for p, _ in self.scn.controller.on_anomaly)
        return False

    # ---------------------------------------------------------------- events

    def _on_chunk(self, now: int, payload) -> None:
        src, k, batches = payload
        for b in batches:
            self._tag(b.tag).injected += len(b)
            self._emit_from(src.entry, b)
        self._schedule_chunk(src, k + 1)

    def _on_host_response(self, now: int, payload) -> None:
        node, batch = payload
        self._tag(batch.tag).injected += len(batch)
        self._emit_from(node, batch)

    def _on_tick(self, now: int, payload) -> None:
        nid, interval, k = payload
        inst = self.nads[nid]
        proc_rng, drop_rng = self.nads_rng[nid]
        for mid, mon in inst.monitors.items():
            if mon.cfg.interval_us != interval:
                continue
            parts = self.buffers.get((nid, mid), [])
            keep, times, sizes, attack_frames = [], [], [], 0
            for arr, sz, is_attack in parts:
                cut = int(np.searchsorted(arr, now, side="left"))
                if cut:
                    times.append(arr[:cut])
                    sizes.append(sz[:cut])
                    if is_attack:
                        attack_frames += cut
                if cut < len(arr):
                    keep.append((arr[cut:], sz[cut:], is_attack))
            self.buffers[(nid, mid)] = keep
            t = np.concatenate(times) if times else np.zeros(0, dtype=np.int64)
            s = np.concatenate(sizes) if sizes else np.zeros(0, dtype=np.int64)
            skip = False
            if inst.drop_probability > 0 and mon.model is not None:
                skip = bool(drop_rng.random() < inst.drop_probability)
            rec = mon.observe(compute_raw(t, s, mon.cfg, k - 1), skip)
            self.intervals.append(rec)
            ms = self.monitor_stats.setdefault(f"{nid}/{mid}", {"assessed": 0, "anomalies": 0, "tp": 0, "fp": 0,
                                                                "fn": 0, "tn": 0, "skipped": 0, "learning": 0})
            attacked = attack_frames > 0
            if rec.verdict is Verdict.LEARNING:
                ms["learning"] += 1
            elif rec.verdict is Verdict.SKIPPED:
                ms["skipped"] += 1
                ms["fn" if attacked else "tn"] += 1
            else:
                ms["assessed"] += 1
                if rec.verdict is Verdict.ANOMALY:
                    ms["anomalies"] += 1
                    ms["tp" if attacked else "fp"] += 1
                    proc = ms_to_us(float(self.lat.nads_processing.sample(proc_rng)))
                    report = AnomalyReport(now + proc, nid, mid, mon.cfg.stream, k - 1, rec.vector, rec.distance)
                    self.q.schedule(now + proc, "report", (report, now))
                else:
                    ms["fn" if attacked else "tn"] += 1
        nxt = now + interval
        if nxt <= self.end:
            self.q.schedule(nxt, "tick", (nid, interval, k + 1))

    def _on_report(self, now: int, payload) -> None:
        report, close = payload
        self.report_ids += 1
        rid = self.report_ids
        body = report.to_dict()
        body.update(report_id=rid, interval_close_us=close)
        self.log.add(now, "anomaly_report", body)
        transit = ms_to_us(float(self.lat.report_transit.sample(self.rng["transit"])))
        self.q.schedule(now + transit, "report_ctrl", (rid, report))
        if self.sensor_mgr is not None:
            hop = path_latency(self.topo, report.nads_id, self.acdc_node)
            sr = SecuritySensorReport(self.scn.acdc.vehicle, report.nads_id, "anomaly_report", report.monitor,
                                      now + hop, rid)
            self.q.schedule(now + hop, "sensor", sr)

    def _on_report_ctrl(self, now: int, payload) -> None:
        rid, report = payload
        action = None
        for pattern, spec in self.scn.controller.on_anomaly:
            if fnmatch.fnmatchcase(report.monitor, pattern):
                action = spec
                break
        key = f"{report.nads_id}/{report.monitor}"
        entry = {"report_id": rid, "nads": report.nads_id, "monitor": report.monitor}
        if action is None:
            entry["action"] = "none"
        elif key in self.handled_monitors:
            entry["action"] = "already_handled"
            entry["countermeasure"] = self.handled_monitors[key]
        else:
            cm_id = self._issue(now, action.build(report.stream), {"report_id": rid})
            self.handled_monitors[key] = cm_id
            entry["action"] = "countermeasure"
            entry["countermeasure"] = cm_id
        self.log.add(now, "report_rx_controller", entry)

    def _issue(self, now: int, cm, cause: dict) -> int:
        plan = self.controller.plan_countermeasure(cm)
        targets = tuple(sorted(plan))
        self.cm_ids += 1
        cid = self.cm_ids
        lc_ms = max((self.ctrl_link[sw] for sw in targets), default=0) / 1000.0
        dispatch, acks = self.flowmod.sample(self.rng["flowmod"], len(targets), lc_ms)
        d_us = ms_to_us(dispatch)
        state = CmState(cid, cm, now, targets, cause)
        self.cms[cid] = state
        self.log.add(now, "countermeasure_issued", {"countermeasure": cid, "action": countermeasure_to_dict(cm),
                                                    "targets": list(targets), "dispatch_ms": d_us / 1000.0, **cause})
        unresponsive = set(self.scn.controller.unresponsive_switches)
        for sw, a in zip(targets, acks):
            if sw in unresponsive:
                continue
            self.q.schedule(now + d_us + ms_to_us(float(a)), "flow_mod", (cid, sw, plan[sw]))
        if not targets:
            self.q.schedule(now + d_us, "cm_complete", cid)
        else:
            self.q.schedule(now + self.scn.controller.ack_deadline_us, "cm_deadline", cid)
        return cid

    def _on_flow_mod(self, now: int, payload) -> None:
        cid, sw, mods = payload
        affected = 0
        for mod in mods:
            affected += apply_flow_mod(self.switches[sw], mod, now).affected
        self._table_version += 1
        self.log.add(now, "flow_mod_applied", {"countermeasure": cid, "switch": sw, "rules_affected": affected})
        self.q.schedule(now + self.ctrl_link[sw], "ack", (cid, sw))

    def _on_ack(self, now: int, payload) -> None:
        cid, sw = payload
        st = self.cms[cid]
        st.acked.add(sw)
        self.log.add(now, "flow_mod_ack", {"countermeasure": cid, "switch": sw})
        if not st.done and st.acked >= set(st.targets):
            self._complete(now, st)

    def _on_cm_complete(self, now: int, cid) -> None:
        self._complete(now, self.cms[cid])

    def _complete(self, now: int, st: CmState) -> None:
        st.done = True
        self.log.add(now, "countermeasure_complete", {"countermeasure": st.id, "frti_us": now - st.issued,
                                                      "acks": sorted(st.acked), **st.cause})

    def _on_cm_deadline(self, now: int, cid) -> None:
        st = self.cms[cid]
        if not st.done:
            missing = sorted(set(st.targets) - st.acked)
            self.log.add(now, "countermeasure_partial", {"countermeasure": cid, "missing": missing})

    def _on_packet_in(self, now: int, payload) -> None:
        sw, in_port, batch = payload
        n = len(batch)
        pin = PacketIn(sw, in_port, batch.template, batch.first)
        decision = self.controller.handle_packet_in(pin, n)
        entry = {"switch": sw, "in_port": in_port, "frame": batch.template.summary(), "count": n,
                 "tag": batch.tag, "decision": type(decision).__name__}
        self.log.add(now, "packet_in", entry)
        if isinstance(decision, DropAndLog):
            self._tag(batch.tag).dropped_controller += n
            self.log.add(now, "acl_violation", decision.log.to_dict())
            if self.sensor_mgr is not None:
                hop = path_latency(self.topo, self.ctrl_node, self.acdc_node)
                subject = decision.log.rule or "unknown"
                self.report_ids += 1
                sr = SecuritySensorReport(self.scn.acdc.vehicle, "sdn_controller", "acl_violation", subject,
                                          now + hop, self.report_ids)
                self.q.schedule(now + hop, "sensor", sr)
        elif isinstance(decision, InstallFlows):
            proc = ms_to_us(float(self.lat.controller_processing.sample(self.rng["ctrl"])))
            for target, mods in decision.mods.items():
                self.q.schedule(now + proc + self.ctrl_link[target], "install", (target, mods))
            t_out = now + proc + self.ctrl_link[sw]
            if decision.packet_out:
                state = self.switches[sw]
                st = self._tag(batch.tag)
                st.copies += (len(decision.packet_out) - 1) * n
                for port in decision.packet_out:
                    nb = state.ports[port]
                    nb_in = self.topo.port_to(nb, sw) if self.topo[nb].is_switch else None
                    lat = self.topo.latency(sw, nb)
                    times = np.full(n, t_out + lat, dtype=np.int64)
                    self._park(nb, nb_in, FrameBatch(batch.template, times, batch.sizes, batch.tag))
            else:
                self._tag(batch.tag).dropped_controller += n
        else:
            self._tag(batch.tag).dropped_controller += n

    def _on_install(self, now: int, payload) -> None:
        sw, mods = payload
        for mod in mods:
            apply_flow_mod(self.switches[sw], mod, now)
        self._table_version += 1
        self.log.add(now, "flows_installed", {"switch": sw, "rules": [m.rule.id for m in mods]})

    # ------------------------------------------------------------------ ACDC

    def _on_sensor(self, now: int, report: SecuritySensorReport) -> None:
        result = self.sensor_mgr.ingest(report)
        self.log.add(now, "sensor_report", {"report_id": report.id, "sensor": report.sensor, "kind": report.kind,
                                            "subject": report.subject, "outcome": result.outcome.value})
        if result.outcome is not Outcome.ESCALATED:
            return
        inc = result.incident
        self.log.add(now, "incident", inc.to_dict())
        directive = backend_decide(inc, self.scn.acdc.rules, now)
        rt = ms_to_us(float(self.lat.acdc_roundtrip.sample(self.rng["acdc"])))
        self.q.schedule(now + rt, "directive_rx", (directive, rt, now))

    def _on_directive_rx(self, now: int, payload) -> None:
        directive, rt, sent = payload
        body = directive.to_dict()
        body.update(roundtrip_us=rt, sensor_rx_us=sent)
        self.log.add(now, "directive_rx", body)
        residual = ms_to_us(self.lat.cloud_residual_ms)
        self.q.schedule(now + residual, "actuate", directive)

    def _on_actuate(self, now: int, directive) -> None:
        try:
            self.actuator.accept(directive)
        except StaleDirective as exc:
            self.log.add(now, "directive_stale", {"incident": directive.incident, "reason": str(exc)})
            return
        action = directive.action
        self.log.add(now, "directive_applied", {"incident": directive.incident, "action": action_to_dict(action)})
        if isinstance(action, SetOperationMode):
            self._set_mode(now, action.mode, directive.incident)
        elif isinstance(action, SdnCountermeasure):
            self._issue(now, action.cm, {"incident": directive.incident})

    def _set_mode(self, now: int, mode_name: str, incident: int) -> None:
        if self.orch is None:
            self.log.add(now, "mode_established", {"mode": mode_name, "incident": incident, "running": []})
            return
        mode = self.scn.orchestrator.mode(mode_name)
        changes, jobs = self.orch.apply_mode(mode, now, self.rng["realloc"])
        for ch in changes:
            if ch.target is None:
                self.log.add(now, "service_disabled", {"service": ch.service, "node": ch.source})
        self.open_jobs[mode_name] = len(jobs)
        for job in jobs:
            self.q.schedule(job.start, "realloc_start", job)
            t = job.start
            for phase, dur in job.timing.phases():
                t += dur
                self.q.schedule(t, "realloc_phase", (job, phase, dur))
            self.q.schedule(job.end, "realloc_done", (job, mode_name, incident))
        if not jobs:
            self._mode_established(now, mode_name, incident)

    def _on_realloc_start(self, now: int, job) -> None:
        self.orch.start(job)
        self.log.add(now, "realloc_start", {"service": job.service, "from": job.source, "to": job.target})

    def _on_realloc_phase(self, now: int, payload) -> None:
        job, phase, dur = payload
        self.log.add(now, "realloc_phase", {"service": job.service, "phase": phase, "duration_ms": dur / 1000.0})

    def _on_realloc_done(self, now: int, payload) -> None:
        job, mode_name, incident = payload
        self.orch.complete(job)
        self.log.add(now, "realloc_done", {"service": job.service, "node": job.target,
                                           "timing_ms": job.timing.to_dict(), "started_us": job.start})
        self.open_jobs[mode_name] -= 1
        if self.open_jobs[mode_name] == 0:
            self._mode_established(now, mode_name, incident)

    def _mode_established(self, now: int, mode_name: str, incident: int) -> None:
        running = sorted(self.orch.running_set()) if self.orch else []
        self.log.add(now, "mode_established", {"mode": mode_name, "incident": incident, "running": running})

    # ---------------------------------------------------------------- finish

    def _finish(self) -> RunResult:
        for node, in_port, batch in self.pending.values():
            self._tag(batch.tag).in_flight += len(batch)
        for ev in list(self.q._heap):
            if ev.kind == "packet_in":
                b = ev.payload[2]
                self._tag(b.tag).in_flight += len(b)
            elif ev.kind == "host_response":
                pass  # not injected yet
        for tag, per_nads in sorted(self.first_at_nads.items()):
            for nid, t in sorted(per_nads.items()):
                self.log.add(t, "attack_first_nads", {"attack": tag[len(ATTACK_PREFIX):], "nads": nid})
        for label, (spec, src) in self.attack_sources.items():
            d = self.deliveries.get(label, {}).get(spec.victim) if spec.victim else None
            if d is not None and d.count:
                self.log.add(d.first, "attack_first_victim", {"attack": spec.id, "victim": spec.victim})
                self.log.add(d.last, "attack_last_victim", {"attack": spec.id, "victim": spec.victim,
                                                            "frames": d.count})
        self.log.add(self.end, "run_end", {"pending_events": len(self.q)})
        extra = {"violations": len(self.controller.violations)}
        return RunResult(self.scn, self.seed, self.log.entries(), self.intervals, self.switches, self.stats,
                         self.deliveries, self.monitor_stats, extra)


def run(scenario, seed: int = 0) -> RunResult:
    return Engine(scenario, seed).run()

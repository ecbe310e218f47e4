"""Fault-handling time measurement from a run's event log.

FDTI runs from the first attack frame at the reporting NADS to the first
anomaly report. FRTI runs from the reaction trigger to the reaction being in
force. FHTI is the span during which the attack affects the victim: first to
last attack frame delivered for a local reaction, first attack frame to the
safe mode being established for a cloud reaction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

LOCAL_COMPONENTS = ("victim_offset", "detection_wait", "nads_processing", "report_transit",
                    "cm_dispatch", "cm_ack", "residual")
CLOUD_COMPONENTS = ("victim_offset", "detection_wait", "nads_processing", "report_transit",
                    "acdc_roundtrip", "cloud_residual", "realloc_total", "residual")


class NoDetection(Exception):
    pass


@dataclass
class TimingRecord:
    scenario: str
    seed: int
    attack: str
    measure: str
    detected: bool
    fdti_ms: float = math.inf
    frti_ms: float = math.inf
    fhti_ms: float = math.inf
    ftti_budget_ms: Optional[float] = None
    breakdown_ms: Dict[str, float] = field(default_factory=dict)

    @property
    def within_budget(self) -> Optional[bool]:
        if self.ftti_budget_ms is None:
            return None
        return self.fhti_ms <= self.ftti_budget_ms

    def to_dict(self) -> dict:
        out = asdict(self)
        out["within_budget"] = self.within_budget
        for k in ("fdti_ms", "frti_ms", "fhti_ms"):
            if math.isinf(out[k]):
                out[k] = None
        return out

    def csv_row(self) -> list:
        def f(v):
            return "inf" if math.isinf(v) else f"{v:.3f}"
        return [self.scenario, self.seed, self.attack, self.measure, int(self.detected),
                f(self.fdti_ms), f(self.frti_ms), f(self.fhti_ms),
                "" if self.ftti_budget_ms is None else self.ftti_budget_ms,
                "" if self.within_budget is None else int(self.within_budget)]


CSV_HEADER = ["scenario", "seed", "attack", "measure", "detected", "fdti_ms", "frti_ms", "fhti_ms",
              "ftti_budget_ms", "within_budget"]


def _ms(us: int) -> float:
    return us / 1000.0


class _Log:
    def __init__(self, entries: Sequence[dict]):
        self.entries = entries

    def first(self, type: str, after: int = -1, **match) -> Optional[dict]:
        for e in self.entries:
            if e["type"] == type and e["time_us"] >= after and all(e["payload"].get(k) == v for k, v in match.items()):
                return e
        return None


def _measure(entries: Sequence[dict], spec, budget: Optional[float]) -> Dict[str, object]:
    log = _Log(entries)
    start = log.first("attack_start", attack=spec.id)
    if start is None:
        raise NoDetection(f"attack {spec.id} never started")
    report = log.first("anomaly_report", after=start["time_us"])
    if report is None:
        raise NoDetection(f"no anomaly report after attack {spec.id} started")
    nads_id = report["payload"]["nads"]
    at_nads = log.first("attack_first_nads", attack=spec.id, nads=nads_id)
    if at_nads is None:
        raise NoDetection(f"report from {nads_id} without attack frames there")
    t_nads = at_nads["time_us"]
    t_report = report["time_us"]
    t_close = report["payload"]["interval_close_us"]
    victim = log.first("attack_first_victim", attack=spec.id)
    t_victim = victim["time_us"] if victim else t_nads
    out: Dict[str, object] = {"fdti": t_report - t_nads}
    parts = {"victim_offset": t_nads - t_victim, "detection_wait": t_close - t_nads,
             "nads_processing": t_report - t_close}
    if spec.measure == "cloud":
        sensor = log.first("sensor_report", after=t_report, outcome="Escalated")
        if sensor is None:
            raise NoDetection("no escalated sensor report")
        rx = log.first("directive_rx", after=sensor["time_us"])
        applied = log.first("directive_applied", after=rx["time_us"]) if rx else None
        est = log.first("mode_established", after=applied["time_us"]) if applied else None
        if est is None:
            out.update(frti=None, fhti=None)
            return out
        started = log.first("realloc_start", after=applied["time_us"])
        realloc = est["time_us"] - (started["time_us"] if started else applied["time_us"])
        out["frti"] = rx["time_us"] - sensor["time_us"] + realloc
        out["fhti"] = est["time_us"] - t_victim
        parts.update(report_transit=sensor["time_us"] - t_report, acdc_roundtrip=rx["time_us"] - sensor["time_us"],
                     cloud_residual=applied["time_us"] - rx["time_us"],
                     realloc_total=est["time_us"] - applied["time_us"])
    else:
        issued = log.first("countermeasure_issued", after=t_report)
        if issued is None:
            out.update(frti=None, fhti=None)
            return out
        cid = issued["payload"]["countermeasure"]
        done = log.first("countermeasure_complete", countermeasure=cid)
        last = log.first("attack_last_victim", attack=spec.id)
        if done is None:
            out.update(frti=None, fhti=None)
            return out
        dispatch = int(round(issued["payload"]["dispatch_ms"] * 1000))
        out["frti"] = done["time_us"] - issued["time_us"]
        t_last = last["time_us"] if last else done["time_us"]
        out["fhti"] = t_last - t_victim
        parts.update(report_transit=issued["time_us"] - t_report, cm_dispatch=dispatch,
                     cm_ack=done["time_us"] - issued["time_us"] - dispatch)
        out["t_end"] = t_last
    end = t_victim + out["fhti"]
    parts["residual"] = end - t_victim - sum(parts.values())
    out["parts"] = parts
    return out


def measure_timings(result) -> List[TimingRecord]:
    """One record per attack whose ``measure`` is local or cloud."""
    scn = result.scenario
    records = []
    for spec in scn.attacks:
        if spec.measure not in ("local", "cloud"):
            continue
        rec = TimingRecord(scn.id, result.seed, spec.id, spec.measure, False, ftti_budget_ms=scn.ftti_budget_ms)
        try:
            m = _measure(result.entries, spec, scn.ftti_budget_ms)
        except NoDetection:
            records.append(rec)
            continue
        rec.detected = True
        rec.fdti_ms = _ms(m["fdti"])
        if m.get("fhti") is not None:
            rec.frti_ms = _ms(m["frti"])
            rec.fhti_ms = _ms(m["fhti"])
            rec.breakdown_ms = {k: _ms(v) for k, v in m["parts"].items()}
        records.append(rec)
    return records


def timing_stats(records: Sequence[TimingRecord]) -> Dict[str, Dict[str, float]]:
    out = {}
    for name in ("fdti_ms", "frti_ms", "fhti_ms"):
        vals = np.array([getattr(r, name) for r in records if r.detected and not math.isinf(getattr(r, name))])
        if vals.size:
            out[name] = {"n": int(vals.size), "min": float(vals.min()), "mean": float(vals.mean()),
                         "max": float(vals.max())}
        else:
            out[name] = {"n": 0}
    return out

"""Run artefacts: event log, interval CSV, timings, summary and flow tables."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from ..dataplane import Origin, dump_table_jsonl
from ..nads import write_interval_csv
from .engine import ATTACK_PREFIX, RESPONSE_PREFIX, RunResult
from .events import events_jsonl
from .timing import CSV_HEADER, TimingRecord, measure_timings, timing_stats


def _count(entries: Sequence[dict], type: str) -> int:
    return sum(1 for e in entries if e["type"] == type)


def build_summary(result: RunResult, timings: Optional[List[TimingRecord]] = None) -> dict:
    timings = measure_timings(result) if timings is None else timings
    entries = result.entries
    reports_by_monitor: Dict[str, int] = {}
    for e in entries:
        if e["type"] == "anomaly_report":
            key = f"{e['payload']['nads']}/{e['payload']['monitor']}"
            reports_by_monitor[key] = reports_by_monitor.get(key, 0) + 1
    rules = {}
    for sw, state in sorted(result.switches.items()):
        static = sum(1 for r in state.table if r.origin is Origin.STATIC)
        rules[sw] = {"total": len(state.table), "static": static, "dynamic": len(state.table) - static,
                     "packet_in": state.packet_in_count}
    probes = sum(st.injected for tag, st in result.stats.items()
                 if tag.startswith(ATTACK_PREFIX) and any(
                     spec.kind == "port_scan" and spec.tag == tag for spec in result.scenario.attacks))
    responses = {}
    for spec in result.scenario.attacks:
        if spec.kind == "port_scan":
            got = result.deliveries.get(RESPONSE_PREFIX + spec.tag, {}).get(spec.entry)
            responses[spec.id] = got.count if got else 0
    deliveries = {tag: {node: {"count": d.count, "first_us": d.first, "last_us": d.last}
                        for node, d in sorted(per.items())}
                  for tag, per in sorted(result.deliveries.items())}
    sensor = {"Forwarded": 0, "Suppressed": 0, "Escalated": 0}
    for e in entries:
        if e["type"] == "sensor_report":
            sensor[e["payload"]["outcome"]] += 1
    modes = [e["payload"] for e in entries if e["type"] == "mode_established"]
    return {
        "scenario": result.scenario.id,
        "seed": result.seed,
        "duration_s": result.scenario.duration_us / 1e6,
        "anomaly_reports": sum(reports_by_monitor.values()),
        "reports_by_monitor": reports_by_monitor,
        "monitors": result.monitors,
        "acl_violations": _count(entries, "acl_violation"),
        "packet_in_events": _count(entries, "packet_in"),
        "rules": rules,
        "packet_in_count": sum(r["packet_in"] for r in rules.values()),
        "probes_sent": probes,
        "responses_observed": sum(responses.values()),
        "responses_by_attack": responses,
        "countermeasures": {"issued": _count(entries, "countermeasure_issued"),
                            "complete": _count(entries, "countermeasure_complete"),
                            "partial": _count(entries, "countermeasure_partial")},
        "acdc": {"sensor_reports": sensor, "incidents": _count(entries, "incident"),
                 "directives": _count(entries, "directive_applied")},
        "operation_mode": modes[-1] if modes else None,
        "timings": [t.to_dict() for t in timings],
        "timing_stats": timing_stats(timings),
        "frames": {tag: st.to_dict() for tag, st in sorted(result.stats.items())},
        "deliveries": deliveries,
    }


def timings_csv(records: Sequence[TimingRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


def _json_default(value):
    if isinstance(value, float) and math.isinf(value):
        return None
    if hasattr(value, "item"):
        return value.item()
    raise TypeError(f"not serialisable: {type(value).__name__}")


def write_outputs(result: RunResult, out_dir, timings: Optional[List[TimingRecord]] = None) -> Path:
    """Write every artefact of one run into ``out_dir``; returns the directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = measure_timings(result) if timings is None else timings
    (out / "events.jsonl").write_text(events_jsonl(result.entries))
    (out / "nads_intervals.csv").write_text(write_interval_csv(result.intervals))
    (out / "timings.csv").write_text(timings_csv(timings))
    summary = build_summary(result, timings)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    tables = out / "flow_tables"
    tables.mkdir(exist_ok=True)
    for sw, state in sorted(result.switches.items()):
        (tables / f"{sw}.jsonl").write_text(dump_table_jsonl(state))
    violations = [e["payload"] for e in result.entries if e["type"] == "acl_violation"]
    (out / "acl_violations.jsonl").write_text(
        "".join(json.dumps(v, sort_keys=True) + "\n" for v in violations))
    return out

"""Cyber defense loop: in-vehicle sensor manager with report fusion, backend
decision rules, actuator manager, and a labelled fleet log generator."""

from __future__ import annotations

import csv
import fnmatch
import io
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .controlplane import Countermeasure, countermeasure_to_dict


class AcdcError(Exception):
    pass


class UnknownSensor(AcdcError):
    pass


class StaleDirective(AcdcError):
    pass


REPORT_KINDS = ("anomaly_report", "acl_violation", "log")


@dataclass(frozen=True)
class SecuritySensorReport:
    vehicle: str
    sensor: str
    kind: str
    subject: str
    timestamp: int
    id: int = 0
    payload: Tuple[Tuple[str, object], ...] = ()

    @property
    def dedup_key(self) -> Tuple[str, str]:
        return (self.sensor, self.subject)

    @property
    def classification(self) -> str:
        return f"{self.kind}:{self.subject}"

    def to_dict(self) -> dict:
        return {"id": self.id, "vehicle": self.vehicle, "sensor": self.sensor, "kind": self.kind,
                "subject": self.subject, "timestamp_us": self.timestamp, "payload": dict(self.payload)}


@dataclass(frozen=True)
class FusionPolicy:
    window_us: int = 1_000_000
    k_threshold: int = 1

    def __post_init__(self):
        if self.k_threshold < 1:
            raise ValueError("k_threshold must be >= 1")
        if self.window_us <= 0:
            raise ValueError("window must be > 0")


class Outcome(str, Enum):
    FORWARDED = "Forwarded"
    SUPPRESSED = "Suppressed"
    ESCALATED = "Escalated"


@dataclass
class Incident:
    id: int
    vehicle: str
    classification: str
    reports: List[int]
    first: int
    last: int

    def to_dict(self) -> dict:
        return {"incident": self.id, "vehicle": self.vehicle, "classification": self.classification,
                "reports": list(self.reports), "first_us": self.first, "last_us": self.last}


@dataclass(frozen=True)
class IngestResult:
    outcome: Outcome
    incident: Optional[Incident] = None


class SensorManager:
    """Filters and fuses reports per (sensor, subject).

    Reports within the window of an open incident for the same key are
    absorbed into it. Otherwise the k-th report inside the window escalates;
    a repeat below the threshold is suppressed and a fresh one forwarded.
    """

    def __init__(self, vehicle: str, sensors: Iterable[str], policy: FusionPolicy = FusionPolicy()):
        self.vehicle = vehicle
        self.sensors = set(sensors)
        self.policy = policy
        self.recent: Dict[Tuple[str, str], Deque[SecuritySensorReport]] = {}
        self.open: Dict[Tuple[str, str], Incident] = {}
        self.incidents: List[Incident] = []
        self.counts = {o: 0 for o in Outcome}

    def register(self, sensor: str) -> None:
        self.sensors.add(sensor)

    def ingest(self, report: SecuritySensorReport) -> IngestResult:
        if report.sensor not in self.sensors:
            raise UnknownSensor(f"sensor {report.sensor!r} is not registered")
        key = report.dedup_key
        now = report.timestamp
        window = self.recent.setdefault(key, deque())
        while window and window[0].timestamp <= now - self.policy.window_us:
            window.popleft()
        duplicate = bool(window)
        window.append(report)
        incident = self.open.get(key)
        if incident is not None and incident.last > now - self.policy.window_us:
            incident.reports.append(report.id)
            incident.last = now
            result = IngestResult(Outcome.SUPPRESSED)
        elif len(window) >= self.policy.k_threshold:
            incident = Incident(len(self.incidents) + 1, self.vehicle, report.classification,
                                [r.id for r in window], window[0].timestamp, now)
            self.incidents.append(incident)
            self.open[key] = incident
            result = IngestResult(Outcome.ESCALATED, incident)
        elif duplicate:
            result = IngestResult(Outcome.SUPPRESSED)
        else:
            result = IngestResult(Outcome.FORWARDED)
        self.counts[result.outcome] += 1
        return result


def sensor_ingest(report: SecuritySensorReport, policy: FusionPolicy, state: SensorManager) -> IngestResult:
    state.policy = policy
    return state.ingest(report)


# ---------------------------------------------------------------------------
# backend


class Stage(str, Enum):
    CONTAINMENT = "Containment"
    ERADICATION = "Eradication"
    RECOVERY = "Recovery"


@dataclass(frozen=True)
class SetOperationMode:
    mode: str


@dataclass(frozen=True)
class SdnCountermeasure:
    cm: Countermeasure


@dataclass(frozen=True)
class NoOp:
    unresolved: bool = True


Action = Union[SetOperationMode, SdnCountermeasure, NoOp]


def action_to_dict(action: Action) -> dict:
    if isinstance(action, SetOperationMode):
        return {"type": "set_operation_mode", "mode": action.mode}
    if isinstance(action, SdnCountermeasure):
        return {"type": "sdn_countermeasure", "countermeasure": countermeasure_to_dict(action.cm)}
    return {"type": "noop", "unresolved": action.unresolved}


@dataclass(frozen=True)
class DecisionRule:
    """Glob pattern over ``kind:subject`` mapped to a stage and action."""

    pattern: str
    stage: Stage
    action: Action


@dataclass(frozen=True)
class ResponseDirective:
    incident: int
    vehicle: str
    stage: Stage
    action: Action
    issued_at: int
    revision: int = 1

    def to_dict(self) -> dict:
        return {"incident": self.incident, "vehicle": self.vehicle, "stage": self.stage.value,
                "action": action_to_dict(self.action), "issued_at_us": self.issued_at,
                "revision": self.revision}


def backend_decide(incident: Incident, rules: Sequence[DecisionRule], issued_at: int = 0,
                   revision: int = 1) -> ResponseDirective:
    """First matching rule wins; no match leaves the incident for manual review."""
    for rule in rules:
        if fnmatch.fnmatchcase(incident.classification, rule.pattern):
            return ResponseDirective(incident.id, incident.vehicle, rule.stage, rule.action, issued_at, revision)
    return ResponseDirective(incident.id, incident.vehicle, Stage.CONTAINMENT, NoOp(True), issued_at, revision)


# ---------------------------------------------------------------------------
# actuator


class ActuatorManager:
    """Accepts directives for one vehicle and hands them to the executors."""

    def __init__(self, vehicle: str, set_mode: Optional[Callable[[str, int], List[dict]]] = None,
                 countermeasure: Optional[Callable[[Countermeasure, int], List[dict]]] = None):
        self.vehicle = vehicle
        self.set_mode = set_mode
        self.countermeasure = countermeasure
        self.applied: Dict[int, int] = {}

    def accept(self, directive: ResponseDirective) -> None:
        if directive.vehicle != self.vehicle:
            raise AcdcError(f"directive for {directive.vehicle} sent to {self.vehicle}")
        seen = self.applied.get(directive.incident)
        if seen is not None and seen >= directive.revision:
            raise StaleDirective(f"incident {directive.incident} already at revision {seen}")
        self.applied[directive.incident] = directive.revision

    def apply(self, directive: ResponseDirective, now: int = 0) -> List[dict]:
        self.accept(directive)
        action = directive.action
        if isinstance(action, SetOperationMode) and self.set_mode is not None:
            return self.set_mode(action.mode, now)
        if isinstance(action, SdnCountermeasure) and self.countermeasure is not None:
            return self.countermeasure(action.cm, now)
        return []


def actuator_apply(directive: ResponseDirective, vehicle: ActuatorManager, now: int = 0) -> List[dict]:
    return vehicle.apply(directive, now)


# ---------------------------------------------------------------------------
# fleet logs


@dataclass(frozen=True)
class AttackBurst:
    """Labelled report burst injected once per vehicle ``per_vehicle`` times."""

    type: str = "dos"
    per_vehicle: int = 1
    reports: int = 20
    spacing_us: int = 100_000
    sensor: str = "nads1"
    subject: str = "video"
    kind: str = "anomaly_report"


@dataclass(frozen=True)
class FleetLogRecord:
    vehicle: str
    timestamp: int
    report: SecuritySensorReport
    ground_truth: str
    burst: Optional[int] = None

    def to_dict(self) -> dict:
        out = self.report.to_dict()
        out["ground_truth"] = self.ground_truth
        out["burst"] = self.burst
        return out


BENIGN_SOURCES = (
    ("nads1", "anomaly_report", "video"),
    ("nads2", "anomaly_report", "control"),
    ("sdn_controller", "acl_violation", "unknown_flow"),
    ("sdn_controller", "log", "heartbeat"),
)


def generate_fleet_logs(n_vehicles: int, duration_us: int, attack_mix: Sequence[AttackBurst] = (),
                        seed: int = 0, benign_rate_per_s: float = 0.01) -> List[FleetLogRecord]:
    """Benign Poisson background plus labelled attack bursts per vehicle.

    Each vehicle draws from its own child seed, so vehicles can be generated
    independently and in any order.
    """
    if n_vehicles < 1:
        raise ValueError("n_vehicles must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n_vehicles)
    records: List[FleetLogRecord] = []
    for v, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        vehicle = f"vehicle-{v + 1:04d}"
        items: List[Tuple[int, str, str, str, str, Optional[int]]] = []
        n_benign = int(rng.poisson(benign_rate_per_s * duration_us / 1e6))
        times = np.sort(rng.integers(0, duration_us, n_benign))
        picks = rng.integers(0, len(BENIGN_SOURCES), n_benign)
        for t, p in zip(times, picks):
            sensor, kind, subject = BENIGN_SOURCES[p]
            items.append((int(t), sensor, kind, subject, "Benign", None))
        burst_id = 0
        for burst in attack_mix:
            length = burst.reports * burst.spacing_us
            for _ in range(burst.per_vehicle):
                burst_id += 1
                start = int(rng.integers(0, max(1, duration_us - length)))
                for i in range(burst.reports):
                    items.append((start + i * burst.spacing_us, burst.sensor, burst.kind, burst.subject,
                                  f"Attack:{burst.type}", burst_id))
        items.sort(key=lambda it: (it[0], it[1], it[3], it[5] or 0))
        for i, (t, sensor, kind, subject, truth, bid) in enumerate(items):
            report = SecuritySensorReport(vehicle, sensor, kind, subject, t, i + 1)
            records.append(FleetLogRecord(vehicle, t, report, truth, bid))
    return records


def replay_fleet(records: Sequence[FleetLogRecord], policy: FusionPolicy,
                 sensors: Iterable[str] = ("nads1", "nads2", "sdn_controller")) -> Dict[str, Dict[str, int]]:
    """Run each vehicle's reports through a fresh sensor manager (labels unused)."""
    managers: Dict[str, SensorManager] = {}
    for rec in records:
        mgr = managers.setdefault(rec.vehicle, SensorManager(rec.vehicle, sensors, policy))
        mgr.ingest(rec.report)
    return {v: {"incidents": len(m.incidents), "escalations": m.counts[Outcome.ESCALATED],
                "suppressions": m.counts[Outcome.SUPPRESSED], "forwarded": m.counts[Outcome.FORWARDED]}
            for v, m in sorted(managers.items())}


def fleet_jsonl(records: Iterable[FleetLogRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


def fleet_summary_csv(records: Sequence[FleetLogRecord], policy: FusionPolicy) -> str:
    stats = replay_fleet(records, policy)
    truth: Dict[str, Dict[str, int]] = {}
    for rec in records:
        t = truth.setdefault(rec.vehicle, {"benign": 0, "attack": 0, "bursts": set()})
        if rec.ground_truth == "Benign":
            t["benign"] += 1
        else:
            t["attack"] += 1
            t["bursts"].add(rec.burst)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["vehicle", "incidents", "escalations", "suppressions", "forwarded",
                "benign_reports", "attack_reports", "attack_bursts"])
    for v, s in stats.items():
        t = truth[v]
        w.writerow([v, s["incidents"], s["escalations"], s["suppressions"], s["forwarded"],
                    t["benign"], t["attack"], len(t["bursts"])])
    return buf.getvalue()

"""Service allocation over compute nodes and reallocation timing.

Every service runs as a single-application unit on at most one node. An
operation mode maps each service to a node, to ``any`` allowed node, to its
current node (``keep``) or to ``Disabled``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .latency import LatencyModel, Pert, ms_to_us

DISABLED = "Disabled"
ANY = "any"
KEEP = "keep"

PHASES = ("scheduler", "management", "create", "app_registration")

# (min, avg, max) in ms per reallocation phase
DEFAULT_PHASE_TRIPLES = {
    "scheduler": (108.0, 124.0, 157.0),
    "management": (540.0, 590.0, 637.0),
    "create": (637.0, 703.0, 975.0),
    "app_registration": (6.0, 8.0, 9.0),
}


def default_phase_models() -> Dict[str, LatencyModel]:
    return {p: Pert.from_triple(*DEFAULT_PHASE_TRIPLES[p]) for p in PHASES}


class OrchestratorError(Exception):
    pass


class InfeasiblePlan(OrchestratorError):
    pass


class NodeRole(str, Enum):
    MASTER = "Master"
    WORKER = "Worker"


class Criticality(str, Enum):
    CRITICAL = "Critical"
    OPTIONAL = "Optional"


@dataclass(frozen=True)
class ComputeNode:
    id: str
    role: NodeRole = NodeRole.WORKER
    capacity: int = 4


@dataclass(frozen=True)
class ServiceApp:
    id: str
    criticality: Criticality = Criticality.OPTIONAL
    allowed_nodes: Tuple[str, ...] = ()
    current_node: Optional[str] = None

    def allows(self, node: str) -> bool:
        return not self.allowed_nodes or node in self.allowed_nodes


@dataclass(frozen=True)
class OperationMode:
    name: str
    policy: Tuple[Tuple[str, str], ...] = ()
    default: str = KEEP

    @classmethod
    def of(cls, name: str, policy: Mapping[str, str], default: str = KEEP) -> "OperationMode":
        return cls(name, tuple(sorted(policy.items())), default)

    @classmethod
    def fail_safe(cls, services: Sequence[ServiceApp], targets: Optional[Mapping[str, str]] = None,
                  name: str = "FailSafe") -> "OperationMode":
        """Disable every optional service; critical ones go to ``targets`` or stay."""
        targets = dict(targets or {})
        policy = {s.id: (DISABLED if s.criticality is Criticality.OPTIONAL else targets.get(s.id, KEEP))
                  for s in services}
        return cls.of(name, policy)

    def target(self, service: str) -> str:
        return dict(self.policy).get(service, self.default)


@dataclass(frozen=True)
class PlacementChange:
    service: str
    source: Optional[str]
    target: Optional[str]

    @property
    def is_move(self) -> bool:
        return self.target is not None


@dataclass(frozen=True)
class AllocationPlan:
    mode: str
    targets: Tuple[Tuple[str, Optional[str]], ...]

    def target(self, service: str) -> Optional[str]:
        return dict(self.targets)[service]

    def diff(self, services: Sequence[ServiceApp]) -> List[PlacementChange]:
        want = dict(self.targets)
        return [PlacementChange(s.id, s.current_node, want[s.id])
                for s in sorted(services, key=lambda s: s.id) if want[s.id] != s.current_node]


def desired_allocation(mode: OperationMode, services: Sequence[ServiceApp],
                       nodes: Sequence[ComputeNode]) -> AllocationPlan:
    """Critical services are placed first; ``any`` picks the first allowed
    node by id with free capacity. Optional services that do not fit are
    disabled; a critical one that does not fit raises :class:`InfeasiblePlan`."""
    node_ids = {n.id for n in nodes}
    if not any(n.role is NodeRole.MASTER for n in nodes):
        raise OrchestratorError("cluster needs at least one master node")
    known = {s.id for s in services}
    for sid, target in mode.policy:
        if sid not in known:
            raise OrchestratorError(f"mode {mode.name} references unknown service {sid}")
        if target not in (DISABLED, ANY, KEEP) and target not in node_ids:
            raise OrchestratorError(f"mode {mode.name} references unknown node {target}")
    capacity = {n.id: n.capacity for n in nodes}
    load = {n.id: 0 for n in nodes}
    targets: Dict[str, Optional[str]] = {}

    def order(s: ServiceApp):
        t = mode.target(s.id)
        flexible = t == ANY or (t == KEEP and s.current_node is None)
        return (s.criticality is not Criticality.CRITICAL, flexible, s.id)

    for s in sorted(services, key=order):
        t = mode.target(s.id)
        if t == DISABLED:
            targets[s.id] = None
            continue
        if t == KEEP and s.current_node is not None:
            t = s.current_node
        if t in (ANY, KEEP):
            candidates = sorted(n for n in node_ids if s.allows(n))
        else:
            candidates = [t] if s.allows(t) else []
        placed = next((n for n in candidates if load[n] < capacity[n]), None)
        if placed is None:
            if s.criticality is Criticality.CRITICAL:
                raise InfeasiblePlan(f"cannot place critical service {s.id} (wanted {t})")
            targets[s.id] = None
            continue
        load[placed] += 1
        targets[s.id] = placed
    return AllocationPlan(mode.name, tuple(sorted(targets.items())))


@dataclass(frozen=True)
class ReallocationTiming:
    """Phase durations in microseconds; ``total`` is their exact sum."""

    scheduler: int = 0
    management: int = 0
    create: int = 0
    app_registration: int = 0

    @property
    def total(self) -> int:
        return self.scheduler + self.management + self.create + self.app_registration

    def phases(self) -> List[Tuple[str, int]]:
        return [(p, getattr(self, p)) for p in PHASES]

    def to_dict(self) -> dict:
        out = {p: v / 1000.0 for p, v in self.phases()}
        out["total"] = self.total / 1000.0
        return out


def sample_timing(models: Mapping[str, LatencyModel], rng: np.random.Generator) -> ReallocationTiming:
    return ReallocationTiming(**{p: ms_to_us(float(models[p].sample(rng))) for p in PHASES})


@dataclass(frozen=True)
class ReallocationJob:
    service: str
    source: Optional[str]
    target: str
    start: int
    timing: ReallocationTiming

    @property
    def end(self) -> int:
        return self.start + self.timing.total


def execute_reallocation(changes: Sequence[PlacementChange], rng: np.random.Generator,
                         models: Optional[Mapping[str, LatencyModel]] = None,
                         start: int = 0, busy_until: Optional[Mapping[str, int]] = None
                         ) -> List[ReallocationJob]:
    """Sample phase timings for every moved service. Moves to the same node
    run one after another in service-id order; different nodes run in
    parallel. ``busy_until`` delays a service still in an earlier move."""
    models = models or default_phase_models()
    busy_until = dict(busy_until or {})
    cursor: Dict[str, int] = {}
    jobs = []
    for ch in sorted((c for c in changes if c.is_move), key=lambda c: (c.target, c.service)):
        t0 = max(cursor.get(ch.target, start), busy_until.get(ch.service, start))
        job = ReallocationJob(ch.service, ch.source, ch.target, t0, sample_timing(models, rng))
        cursor[ch.target] = job.end
        jobs.append(job)
    return jobs


class Orchestrator:
    """Placement state that follows reallocation jobs over time."""

    def __init__(self, nodes: Sequence[ComputeNode], services: Sequence[ServiceApp],
                 models: Optional[Mapping[str, LatencyModel]] = None, mode: str = "Normal"):
        self.nodes = list(nodes)
        self.services: Dict[str, ServiceApp] = {s.id: s for s in services}
        self.models = dict(models or default_phase_models())
        self.mode = mode
        self.running: Dict[str, Optional[str]] = {s.id: s.current_node for s in services}
        self.busy_until: Dict[str, int] = {}

    def plan(self, mode: OperationMode) -> AllocationPlan:
        return desired_allocation(mode, list(self.services.values()), self.nodes)

    def apply_mode(self, mode: OperationMode, now: int, rng: np.random.Generator
                   ) -> Tuple[List[PlacementChange], List[ReallocationJob]]:
        """Disable services immediately and return the reallocation jobs for
        moved ones. A moved service keeps running on its old node until its
        job starts (:meth:`start`) and is up again when it completes."""
        plan = self.plan(mode)
        changes = plan.diff(list(self.services.values()))
        jobs = execute_reallocation(changes, rng, self.models, now, self.busy_until)
        for ch in changes:
            if ch.target is None:
                self.running[ch.service] = None
            s = self.services[ch.service]
            self.services[ch.service] = ServiceApp(s.id, s.criticality, s.allowed_nodes, ch.target)
        for job in jobs:
            self.busy_until[job.service] = job.end
        self.mode = mode.name
        return changes, jobs

    def start(self, job: ReallocationJob) -> None:
        """Tear the service down on its old node."""
        self.running[job.service] = None

    def complete(self, job: ReallocationJob) -> None:
        self.running[job.service] = job.target

    def running_set(self) -> set:
        return {s for s, n in self.running.items() if n is not None}

    def critical_set(self) -> set:
        return {s.id for s in self.services.values() if s.criticality is Criticality.CRITICAL}

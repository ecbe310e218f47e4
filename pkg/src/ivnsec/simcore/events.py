"""Event queue and event log.

Events run in (time, seq) order; ``seq`` is assigned when an event is
scheduled, so ties resolve by scheduling order.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

INF = 2 ** 62


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    def __init__(self):
        self._heap: List[SimEvent] = []
        self._seq = 0

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def schedule(self, time: int, kind: str, payload: Any = None) -> SimEvent:
        ev = SimEvent(int(time), self.next_seq(), kind, payload)
        heapq.heappush(self._heap, ev)
        return ev

    def peek_time(self) -> int:
        return self._heap[0].time if self._heap else INF

    def peek(self) -> Optional[SimEvent]:
        return self._heap[0] if self._heap else None

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)

    def __len__(self) -> int:
        return len(self._heap)


class EventLog:
    """Collects log entries; :meth:`entries` returns them in (time, seq) order."""

    def __init__(self, seq_source: Callable[[], int]):
        self._items: List[Tuple[int, int, str, dict]] = []
        self._seq = seq_source

    def add(self, time: int, type: str, payload: Optional[dict] = None, seq: Optional[int] = None) -> None:
        self._items.append((int(time), seq if seq is not None else self._seq(), type, payload or {}))

    def entries(self) -> List[dict]:
        return [{"time_us": t, "seq": s, "type": k, "payload": p} for t, s, k, p in sorted(self._items, key=lambda x: (x[0], x[1]))]

    def of_type(self, type: str) -> List[dict]:
        return [e for e in self.entries() if e["type"] == type]


def events_jsonl(entries: List[dict]) -> str:
    return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in entries)

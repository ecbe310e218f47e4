"""Independent reference implementations used by several test modules."""

from __future__ import annotations

import math
from typing import List, Sequence, Tuple

Point = Tuple[float, float]


def density_ascent(samples: Sequence[Point], h: float, tol: float = 1e-4, max_iter: int = 100) -> List[Point]:
    """Plain-loop flat-kernel ascent: each start point repeatedly moves to the
    mean of the samples within distance ``h`` of it."""
    out = []
    for start in samples:
        x, y = start
        for _ in range(max_iter):
            near = [(a, b) for a, b in samples if math.hypot(a - x, b - y) <= h]
            nx = sum(a for a, _ in near) / len(near)
            ny = sum(b for _, b in near) / len(near)
            moved = math.hypot(nx - x, ny - y)
            x, y = nx, ny
            if moved < tol:
                break
        out.append((x, y))
    return out


def merge_in_order(points: Sequence[Point], radius: float) -> List[Point]:
    """Visit points by index; each joins the first group whose centroid is
    within ``radius`` (the centroid is recomputed), else starts a group. Then
    groups whose centroids are within ``radius`` are fused until none are."""
    groups: List[List[Point]] = []

    def centroid(g):
        return (sum(p[0] for p in g) / len(g), sum(p[1] for p in g) / len(g))

    def close(a, b):
        return math.hypot(a[0] - b[0], a[1] - b[1]) <= radius

    for p in points:
        for g in groups:
            if close(p, centroid(g)):
                g.append(p)
                break
        else:
            groups.append([p])
    fused = True
    while fused:
        fused = False
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                if close(centroid(groups[a]), centroid(groups[b])):
                    groups[a].extend(groups.pop(b))
                    fused = True
                    break
            if fused:
                break
    return [centroid(g) for g in groups]


def brute_force_modes(samples: Sequence[Point], h: float) -> List[Point]:
    return merge_in_order(density_ascent(samples, h), h / 2.0)


def fusion_replay(reports, k: int, window_us: int) -> List[str]:
    """Reference replay of (sensor, subject, time) reports through the fusion
    rule. A report joins an open incident of its key when the incident's last
    report is younger than the window; otherwise the k-th report inside the
    window escalates, an earlier repeat is suppressed and a lone one forwarded."""
    outcomes = []
    seen = {}
    incident_last = {}
    for sensor, subject, t in reports:
        key = (sensor, subject)
        recent = [s for s in seen.get(key, []) if s > t - window_us]
        duplicate = len(recent) > 0
        recent.append(t)
        seen[key] = recent
        last = incident_last.get(key)
        if last is not None and last > t - window_us:
            outcomes.append("Suppressed")
            incident_last[key] = t
        elif len(recent) >= k:
            outcomes.append("Escalated")
            incident_last[key] = t
        elif duplicate:
            outcomes.append("Suppressed")
        else:
            outcomes.append("Forwarded")
    return outcomes

"""Independent reference implementations used only by the tests.

Nothing here imports the package's evaluators or kernels; each function is
the plainest possible restatement of the definition it checks against.
"""
from __future__ import annotations

from fchprobe import mtl


def holds(events: dict, phi, t: int) -> bool:
    """Point semantics by direct recursion over the formula."""
    if isinstance(phi, mtl.AP):
        return any(a <= t <= b for a, b in events[phi.name])
    if isinstance(phi, mtl.Not):
        return not holds(events, phi.child, t)
    if isinstance(phi, mtl.And):
        return holds(events, phi.left, t) and holds(events, phi.right, t)
    if isinstance(phi, mtl.Or):
        return holds(events, phi.left, t) or holds(events, phi.right, t)
    if isinstance(phi, mtl.Next):
        return holds(events, phi.child, t + 1)
    if isinstance(phi, mtl.Finally):
        return any(holds(events, phi.child, t + d) for d in range(phi.bound.lo, phi.bound.hi + 1))
    if isinstance(phi, mtl.Globally):
        return all(holds(events, phi.child, t + d) for d in range(phi.bound.lo, phi.bound.hi + 1))
    if isinstance(phi, mtl.Until):
        for d in range(phi.bound.lo, phi.bound.hi + 1):
            if holds(events, phi.right, t + d) and all(holds(events, phi.left, k) for k in range(t + 1, t + d)):
                return True
        return False
    raise TypeError(phi)


def true_points(h: mtl.History, phi) -> set:
    events = {k: list(v) for k, v in h.events.items()}
    return {t for t in range(h.universe.lo, h.universe.hi + 1) if holds(events, phi, t)}


def points(interval_set) -> set:
    return {t for a, b in interval_set.spans for t in range(a, b + 1)}


def floyd_warshall(nodes, edges) -> set:
    """Reachability (paths of length >= 1) by Floyd-Warshall."""
    nodes = sorted(nodes)
    idx = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    reach = [[False] * n for _ in range(n)]
    for a, b in edges:
        reach[idx[a]][idx[b]] = True
    for k in range(n):
        for i in range(n):
            if reach[i][k]:
                for j in range(n):
                    if reach[k][j]:
                        reach[i][j] = True
    return {(nodes[i], nodes[j]) for i in range(n) for j in range(n) if reach[i][j]}


def symmetric_closure(edges) -> set:
    return set(edges) | {(b, a) for a, b in edges}


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)

"""MaxWeight scheduling as weighted independent set on the conflict graph.

Links with zero utility are never activated, so every schedule is a subset of
the positive-utility links.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .routing import build_utilities  # noqa: F401  (re-exported)

EXACT_LIMIT = 25


class SchedulerKind(str, Enum):
    GREEDY = "greedy"
    LOCAL_GREEDY = "local_greedy"
    EXACT = "exact"


def _priority_order(utilities: np.ndarray) -> np.ndarray:
    # descending utility, ascending link id on ties
    ids = np.arange(len(utilities))
    return np.lexsort((ids, -utilities))


def greedy_maximal_schedule(cg, utilities) -> np.ndarray:
    """Centralized greedy: take the best remaining link, drop its conflicts."""
    u = np.asarray(utilities, dtype=float)
    active = np.zeros(len(u), dtype=bool)
    blocked = np.zeros(len(u), dtype=bool)
    nbrs = cg.neighbors
    for e in _priority_order(u):
        if u[e] <= 0:
            break
        if blocked[e]:
            continue
        active[e] = True
        blocked[nbrs[e]] = True
    return active


def local_greedy_schedule(cg, utilities, return_rounds: bool = False):
    """Synchronous rounds: each undecided link that beats all undecided
    neighbours in (utility, -id) order joins; its neighbours drop out."""
    u = np.asarray(utilities, dtype=float)
    n = len(u)
    active = np.zeros(n, dtype=bool)
    undecided = u > 0
    a, b = (cg.conflicts[:, 0], cg.conflicts[:, 1]) if len(cg.conflicts) else ([], [])
    a, b = np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)
    # a < b, so a wins ties
    a_wins = u[a] >= u[b]
    rounds = 0
    while undecided.any():
        rounds += 1
        live = undecided[a] & undecided[b]
        lost = np.zeros(n, dtype=bool)
        lost[b[live & a_wins]] = True
        lost[a[live & ~a_wins]] = True
        winners = undecided & ~lost
        active |= winners
        undecided &= ~winners
        drop = np.zeros(n, dtype=bool)
        drop[b[winners[a]]] = True
        drop[a[winners[b]]] = True
        undecided &= ~drop
    return (active, rounds) if return_rounds else active


def exact_mwis(cg, utilities) -> np.ndarray:
    """Optimal independent set by branch and bound over positive-utility links."""
    u = np.asarray(utilities, dtype=float)
    if len(u) > EXACT_LIMIT:
        raise ValueError(f"exact_mwis supports at most {EXACT_LIMIT} links, got {len(u)}")
    cand = [int(e) for e in _priority_order(u) if u[e] > 0]
    nbr_mask = [0] * len(u)
    for e in range(len(u)):
        for v in cg.neighbors[e]:
            nbr_mask[e] |= 1 << int(v)
    suffix = [0.0] * (len(cand) + 1)
    for k in range(len(cand) - 1, -1, -1):
        suffix[k] = suffix[k + 1] + u[cand[k]]

    best_val, best_set = 0.0, 0

    def search(k: int, banned: int, val: float, chosen: int) -> None:
        nonlocal best_val, best_set
        if val > best_val:
            best_val, best_set = val, chosen
        if k == len(cand) or val + suffix[k] <= best_val:
            return
        e = cand[k]
        if not banned >> e & 1:
            search(k + 1, banned | nbr_mask[e], val + u[e], chosen | 1 << e)
        search(k + 1, banned, val, chosen)

    search(0, 0, 0.0, 0)
    return np.array([bool(best_set >> e & 1) for e in range(len(u))], dtype=bool)


SCHEDULERS = {
    SchedulerKind.GREEDY: greedy_maximal_schedule,
    SchedulerKind.LOCAL_GREEDY: local_greedy_schedule,
    SchedulerKind.EXACT: exact_mwis,
}


def get_scheduler(kind):
    return SCHEDULERS[SchedulerKind(kind)]


def schedule_value(schedule, utilities) -> float:
    return float(np.asarray(utilities, dtype=float)[np.asarray(schedule, dtype=bool)].sum())


def is_maximal(cg, schedule, utilities) -> bool:
    """No positive-utility link can be added without a conflict."""
    s = np.asarray(schedule, dtype=bool)
    u = np.asarray(utilities, dtype=float)
    for e in np.flatnonzero((u > 0) & ~s):
        if not s[cg.neighbors[e]].any():
            return False
    return True

"""Per-slot backpressure decisions and queue bookkeeping.

Queues are keyed by (node, commodity) where the commodity is the packet's
destination. Each queue keeps FIFO runs ``[birth_slot, count]`` so per-packet
delays stay exact without storing one record per packet.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class InvariantError(RuntimeError):
    """A simulation invariant was breached (independence, conservation, ...)."""


# -- commodity / weight selection -------------------------------------------


def select_commodity(eff_i, eff_j) -> tuple[int, float]:
    """argmax_c (eff_i[c] - eff_j[c]); ties go to the smallest commodity id.

    `eff_*` are effective backlogs (queue plus bias) indexed by commodity.
    Returns the commodity and the attained (possibly negative) backpressure.
    """
    diff = np.asarray(eff_i, dtype=float) - np.asarray(eff_j, dtype=float)
    c = int(np.argmax(diff))
    return c, float(diff[c])


def link_weight(bp_ij: float, bp_ji: float, i: int, j: int):
    """Clamp each direction at zero, keep the larger one.

    Returns ``(weight, (sender, receiver))``; equal weights resolve to the
    lexicographically smaller (sender, receiver) pair.
    """
    w_ij = max(bp_ij, 0.0)
    w_ji = max(bp_ji, 0.0)
    forward = (i, j) < (j, i)
    if w_ij > w_ji or (w_ij == w_ji and forward):
        return w_ij, (i, j)
    return w_ji, (j, i)


@dataclass
class LinkDecisions:
    """One row per undirected link, in link-id order."""

    sender: np.ndarray
    receiver: np.ndarray
    commodity: np.ndarray
    weight: np.ndarray  # clamped, max over the two directions

    def utilities(self, rates) -> np.ndarray:
        return build_utilities(self, rates)


def _decide(eff: np.ndarray, edges: np.ndarray, backlog=None) -> LinkDecisions:
    # with `backlog`, a direction only considers commodities its sender holds
    i, j = edges[:, 0], edges[:, 1]
    diff = eff[i] - eff[j]  # (E, V): backpressure of i->j per commodity
    if backlog is None:
        fwd_d, bwd_d = diff, -diff
    else:
        fwd_d = np.where(backlog[i] > 0, diff, -np.inf)
        bwd_d = np.where(backlog[j] > 0, -diff, -np.inf)
    c_fwd = np.argmax(fwd_d, axis=1)
    c_bwd = np.argmax(bwd_d, axis=1)
    rows = np.arange(len(edges))
    w_fwd = np.maximum(fwd_d[rows, c_fwd], 0.0)
    w_bwd = np.maximum(bwd_d[rows, c_bwd], 0.0)
    # i < j for stored edges, so (i, j) wins exact ties
    fwd = w_fwd >= w_bwd
    return LinkDecisions(
        sender=np.where(fwd, i, j),
        receiver=np.where(fwd, j, i),
        commodity=np.where(fwd, c_fwd, c_bwd),
        weight=np.where(fwd, w_fwd, w_bwd),
    )


def classical_decisions(backlog: np.ndarray, edges: np.ndarray) -> LinkDecisions:
    """Commodity and weight per link from raw queue lengths."""
    return _decide(backlog.astype(float), edges)


def biased_decisions(
    backlog: np.ndarray, bias: np.ndarray, edges: np.ndarray, backlogged_only: bool = True
) -> LinkDecisions:
    """Commodity and weight per link from effective backlogs U + B.

    With `backlogged_only`, commodities with an empty sender queue are not
    candidates; otherwise every commodity is (and an empty commodity whose
    bias slopes downhill can win the link without moving any packet).
    """
    return _decide(backlog + bias, edges, backlog if backlogged_only else None)


def build_utilities(decisions: LinkDecisions, rates) -> np.ndarray:
    return np.asarray(rates, dtype=float) * decisions.weight


# -- queues ------------------------------------------------------------------


@dataclass
class Transmission:
    link: int
    sender: int
    receiver: int
    commodity: int
    count: int


@dataclass
class SlotTransmissions:
    transmissions: list = field(default_factory=list)
    # runs of packets that reached their destination: (birth_slot, count)
    delivered: list = field(default_factory=list)

    @property
    def delivered_count(self) -> int:
        return sum(n for _, n in self.delivered)


class QueueState:
    def __init__(self, num_nodes: int):
        self.num_nodes = num_nodes
        self.backlog = np.zeros((num_nodes, num_nodes), dtype=np.int64)
        self._fifo: dict[tuple[int, int], deque] = {}
        self.arrived = 0
        self.delivered = 0

    def fifo(self, node: int, commodity: int) -> list:
        return [tuple(r) for r in self._fifo.get((node, commodity), ())]

    def _push(self, node: int, commodity: int, birth: int, count: int) -> None:
        q = self._fifo.get((node, commodity))
        if q is None:
            q = self._fifo[(node, commodity)] = deque()
        if q and q[-1][0] == birth:
            q[-1][1] += count
        else:
            q.append([birth, count])
        self.backlog[node, commodity] += count

    def _pop(self, node: int, commodity: int, count: int) -> list:
        q = self._fifo[(node, commodity)]
        out = []
        while count > 0:
            run = q[0]
            take = min(run[1], count)
            out.append((run[0], take))
            run[1] -= take
            count -= take
            if run[1] == 0:
                q.popleft()
        return out

    def apply_arrivals(self, counts, flows, t: int) -> None:
        for f, n in zip(flows, counts):
            n = int(n)
            if n:
                self._push(f.source, f.destination, t, n)
                self.arrived += n

    def move(self, sender: int, receiver: int, commodity: int, count: int):
        """Move the `count` oldest packets; returns delivered runs."""
        runs = self._pop(sender, commodity, count)
        self.backlog[sender, commodity] -= count
        if receiver == commodity:
            self.delivered += count
            return runs
        for birth, n in runs:
            self._push(receiver, commodity, birth, n)
        return []

    def in_flight(self) -> list:
        """All queued runs as (birth_slot, count)."""
        return [(b, n) for q in self._fifo.values() for b, n in q]

    def check(self, deep: bool = False) -> None:
        if self.backlog.min(initial=0) < 0:
            raise InvariantError("negative queue length")
        if np.any(np.diagonal(self.backlog)):
            raise InvariantError("packets queued at their own destination")
        if int(self.backlog.sum()) + self.delivered != self.arrived:
            raise InvariantError("packet conservation violated")
        if deep:
            for (i, c), q in self._fifo.items():
                if sum(n for _, n in q) != self.backlog[i, c]:
                    raise InvariantError(f"fifo length mismatch at queue ({i}, {c})")


def commit_transmissions(
    state: QueueState,
    schedule,
    decisions: LinkDecisions,
    rates,
    conflict_graph=None,
) -> SlotTransmissions:
    """Serve every scheduled link with positive weight: up to its realized
    rate of the chosen commodity moves FIFO from sender to receiver."""
    schedule = np.asarray(schedule, dtype=bool)
    if conflict_graph is not None and not conflict_graph.is_independent(schedule):
        raise InvariantError("schedule is not an independent set of the conflict graph")
    out = SlotTransmissions()
    for e in np.flatnonzero(schedule):
        if decisions.weight[e] <= 0:
            continue
        s, r, c = int(decisions.sender[e]), int(decisions.receiver[e]), int(decisions.commodity[e])
        n = min(int(rates[e]), int(state.backlog[s, c]))
        if n <= 0:
            continue
        out.delivered.extend(state.move(s, r, c, n))
        out.transmissions.append(Transmission(int(e), s, r, c, n))
    return out

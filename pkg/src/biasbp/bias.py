"""Per-link distances and shortest-path bias tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import dijkstra


class DistanceKind(str, Enum):
    NONE = "none"
    HOP = "hop"
    SCALED_HOP = "scaled_hop"
    RATE_SCALED = "rate_scaled"
    DUTY_INVERSE = "duty_inverse"
    DUTY_RATE = "duty_rate"


@dataclass(frozen=True)
class DistancePolicy:
    kind: DistanceKind
    scale: float = 1.0

    @property
    def needs_duty(self) -> bool:
        return self.kind in (DistanceKind.DUTY_INVERSE, DistanceKind.DUTY_RATE)

    @property
    def needs_rates(self) -> bool:
        return self.kind in (DistanceKind.RATE_SCALED, DistanceKind.DUTY_RATE)

    @property
    def name(self) -> str:
        k, s = self.kind, _fmt(self.scale)
        if k is DistanceKind.NONE:
            return "BP"
        if k is DistanceKind.HOP:
            return "SP-Hop"
        if k is DistanceKind.SCALED_HOP:
            return f"EDR-{s}"
        if k is DistanceKind.RATE_SCALED:
            return f"SP-{s}rbar/r"
        if k is DistanceKind.DUTY_INVERSE:
            return "SP-1/x"
        return "SP-rbar/(xr)"

    def __str__(self) -> str:
        return self.name


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def parse_policy(name: str) -> DistancePolicy:
    """Benchmark names: BP, SP-Hop, EDR-<k>, SP-<k>rbar/r, SP-1/x, SP-rbar/(xr)."""
    key = name.strip().replace("r̄", "rbar")
    low = key.lower()
    if low in ("bp", "none"):
        return DistancePolicy(DistanceKind.NONE, 0.0)
    if low in ("sp-hop", "hop"):
        return DistancePolicy(DistanceKind.HOP)
    if low in ("sp-1/x", "duty_inverse"):
        return DistancePolicy(DistanceKind.DUTY_INVERSE)
    if low in ("sp-rbar/(xr)", "duty_rate"):
        return DistancePolicy(DistanceKind.DUTY_RATE)
    if low.startswith("edr-"):
        return DistancePolicy(DistanceKind.SCALED_HOP, float(key[4:]))
    if low.startswith("sp-") and low.endswith("rbar/r"):
        k = key[3:-6]
        return DistancePolicy(DistanceKind.RATE_SCALED, float(k) if k else 1.0)
    raise ValueError(f"unknown policy {name!r}")


BASELINE_POLICIES = ("BP", "SP-Hop", "EDR-10", "SP-10rbar/r")
DUTY_POLICIES = ("SP-1/x", "SP-rbar/(xr)")
ALL_POLICIES = BASELINE_POLICIES + DUTY_POLICIES


def link_distances(policy: DistancePolicy, num_links: int, duty=None, rates=None):
    """Per-link distance vector for `policy`, or None for classical BP.

    `duty` holds predicted duty cycles per link; `rates` is a
    LinkRateProcess (long-term rates and the network mean rate).
    """
    k = policy.kind
    if k is DistanceKind.NONE:
        return None
    if policy.needs_duty and duty is None:
        raise ValueError(f"{policy} requires duty cycles")
    if policy.needs_rates and rates is None:
        raise ValueError(f"{policy} requires link rates")
    if policy.needs_rates:
        r = np.asarray(rates.long_term_rates, dtype=float)
        if np.any(r <= 0):
            raise ValueError("non-positive long-term link rate under a rate policy")
        rbar = rates.network_mean_rate
    if k is DistanceKind.HOP:
        d = np.ones(num_links)
    elif k is DistanceKind.SCALED_HOP:
        d = np.full(num_links, float(policy.scale))
    elif k is DistanceKind.RATE_SCALED:
        d = policy.scale * rbar / r
    else:
        x = np.asarray(duty, dtype=float)
        if np.any(x <= 0):
            raise ValueError("duty cycles must be strictly positive")
        d = 1.0 / x if k is DistanceKind.DUTY_INVERSE else rbar / (x * r)
    if len(d) != num_links:
        raise ValueError("distance vector length does not match link count")
    return d


def apsp_bias(graph, distances) -> np.ndarray:
    """Table B[i, c] = weighted shortest-path distance from node i to node c."""
    d = np.asarray(distances, dtype=float)
    if np.any(~np.isfinite(d)) or np.any(d <= 0):
        raise ValueError("link distances must be finite and positive")
    table = dijkstra(graph.adjacency(d), directed=False)
    if not np.all(np.isfinite(table)):
        raise ValueError("graph is disconnected: some node pairs are unreachable")
    # the two directions of a path can round differently
    return np.minimum(table, table.T)


def sssp_bias(graph, distances, destination: int, return_rounds: bool = False):
    """Distances to `destination` by synchronous Bellman-Ford rounds.

    Each round every node relaxes against its neighbours' previous-round
    estimates, the way the distributed protocol runs.
    """
    d = np.asarray(distances, dtype=float)
    n = graph.num_nodes
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    w = np.concatenate([d, d])
    est = np.full(n, np.inf)
    est[destination] = 0.0
    rounds = 0
    for _ in range(n):
        cand = np.full(n, np.inf)
        np.minimum.at(cand, src, est[dst] + w)
        new = np.minimum(est, cand)
        if np.array_equal(new, est):
            break
        est = new
        rounds += 1
    if not np.all(np.isfinite(est)):
        raise ValueError("graph is disconnected: some node pairs are unreachable")
    return (est, rounds) if return_rounds else est


def bias_table(policy, net, duty=None, rates=None):
    """Bias table for `policy` on `net`; None means classical BP."""
    if isinstance(policy, str):
        policy = parse_policy(policy)
    d = link_distances(policy, net.num_links, duty, rates)
    if d is None:
        return None
    return apsp_bias(net.graph, d)


def write_bias_csv(table: np.ndarray, path, header_comment: str | None = None) -> None:
    with open(Path(path), "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["source", "destination", "bias"])
        n = table.shape[0]
        for i in range(n):
            for c in range(n):
                w.writerow([i, c, repr(float(table[i, c]))])


def read_bias_csv(path) -> np.ndarray:
    with open(Path(path)) as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    body = rows[1:]
    n = max(max(int(r[0]), int(r[1])) for r in body) + 1
    table = np.zeros((n, n))
    for s, c, b in body:
        table[int(s), int(c)] = float(b)
    return table

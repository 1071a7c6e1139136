"""Flows, Poisson arrivals and stochastic link rates for one episode."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Flow:
    source: int
    destination: int
    arrival_rate: float

    def __post_init__(self):
        if self.source == self.destination:
            raise ValueError("flow source and destination must differ")
        if self.arrival_rate < 0:
            raise ValueError("arrival rate must be non-negative")


@dataclass(frozen=True)
class LinkRateProcess:
    long_term_rates: np.ndarray  # (E,) float
    realized_rates: np.ndarray  # (E, T) int64

    @property
    def network_mean_rate(self) -> float:
        return float(self.realized_rates.mean()) if self.realized_rates.size else 0.0


@dataclass(frozen=True)
class Episode:
    """Everything random about one test instance, replayable across policies."""

    flows: tuple
    arrivals: np.ndarray  # (F, T) int64
    rates: LinkRateProcess

    @property
    def horizon(self) -> int:
        return self.arrivals.shape[1]

    def save(self, path) -> None:
        np.savez_compressed(
            Path(path),
            sources=np.array([f.source for f in self.flows], dtype=np.int64),
            destinations=np.array([f.destination for f in self.flows], dtype=np.int64),
            arrival_rates=np.array([f.arrival_rate for f in self.flows], dtype=float),
            arrivals=self.arrivals,
            long_term_rates=self.rates.long_term_rates,
            realized_rates=self.rates.realized_rates,
        )

    @classmethod
    def load(cls, path) -> "Episode":
        with np.load(Path(path)) as z:
            flows = tuple(
                Flow(int(s), int(d), float(r))
                for s, d, r in zip(z["sources"], z["destinations"], z["arrival_rates"])
            )
            return cls(
                flows,
                z["arrivals"].copy(),
                LinkRateProcess(z["long_term_rates"].copy(), z["realized_rates"].copy()),
            )


def flow_count_range(num_nodes: int) -> tuple[int, int]:
    return math.floor(0.15 * num_nodes), math.ceil(0.30 * num_nodes)


def _count(net_or_n, attr: str) -> int:
    return int(getattr(net_or_n, attr, net_or_n))


def sample_flows(net, count_range, rate_range=(0.2, 1.0), seed=None) -> list[Flow]:
    """Distinct (source, destination) pairs with U(rate_range) arrival rates.

    `net` is a NetworkInstance or a plain node count.
    """
    num_nodes = _count(net, "num_nodes")
    if num_nodes < 2:
        raise ValueError("need at least two nodes")
    rng = np.random.default_rng(seed)
    lo, hi = int(count_range[0]), int(count_range[1])
    count = int(rng.integers(lo, hi + 1))
    max_pairs = num_nodes * (num_nodes - 1)
    if count > max_pairs:
        raise ValueError(f"{count} flows exceed {max_pairs} distinct ordered pairs")
    # pair index k -> (k // (n-1), skip-diagonal column)
    picks = rng.choice(max_pairs, size=count, replace=False)
    src = picks // (num_nodes - 1)
    dst = picks % (num_nodes - 1)
    dst = dst + (dst >= src)
    rates = rng.uniform(rate_range[0], rate_range[1], size=count)
    return [Flow(int(s), int(d), float(r)) for s, d, r in zip(src, dst, rates)]


def sample_arrivals(flows, T: int, seed=None) -> np.ndarray:
    if T < 1:
        raise ValueError("horizon must be at least one slot")
    rng = np.random.default_rng(seed)
    lam = np.array([f.arrival_rate for f in flows], dtype=float).reshape(-1, 1)
    return rng.poisson(lam, size=(len(lam), T)).astype(np.int64)


def sample_link_rates(
    net, rate_range=(10.0, 42.0), noise_sd: float = 3.0, T: int = 1000, seed=None
) -> LinkRateProcess:
    """Long-term rates ~ U(rate_range); per-slot rates are Gaussian around
    them (`noise_sd` is a standard deviation), rounded and clamped at zero."""
    num_links = _count(net, "num_links")
    if rate_range[0] < 0:
        raise ValueError("rates must be non-negative")
    rng = np.random.default_rng(seed)
    r = rng.uniform(rate_range[0], rate_range[1], size=num_links)
    realized = rng.normal(r[:, None], noise_sd, size=(num_links, T))
    realized = np.rint(np.maximum(realized, 0.0)).astype(np.int64)
    return LinkRateProcess(r, realized)


def sample_episode(
    net,
    T: int = 1000,
    seed=None,
    count_range=None,
    rate_range=(0.2, 1.0),
    link_rate_range=(10.0, 42.0),
    noise_sd: float = 3.0,
    fixed_arrival_rate: float | None = None,
) -> Episode:
    """Flows, arrivals and link rates for `net`, each drawn from its own
    child stream of `seed`."""
    ss = np.random.SeedSequence(seed)
    s_flow, s_arr, s_rate = ss.spawn(3)
    if count_range is None:
        count_range = flow_count_range(net.num_nodes)
    flows = sample_flows(net, count_range, rate_range, s_flow)
    if fixed_arrival_rate is not None:
        flows = [Flow(f.source, f.destination, fixed_arrival_rate) for f in flows]
    arrivals = sample_arrivals(flows, T, s_arr)
    rates = sample_link_rates(net, link_rate_range, noise_sd, T, s_rate)
    return Episode(tuple(flows), arrivals, rates)

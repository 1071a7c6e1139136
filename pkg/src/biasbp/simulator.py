"""Slot loop, episode metrics and the multi-policy benchmark harness."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bias import DistancePolicy, bias_table, parse_policy
from .routing import (
    InvariantError,
    QueueState,
    biased_decisions,
    build_utilities,
    classical_decisions,
    commit_transmissions,
)
from .scheduler import SchedulerKind, get_scheduler
from .topology import ConflictModel, TopologyConfig, generate_network
from .traffic import sample_episode

log = logging.getLogger(__name__)


@dataclass
class EpisodeConfig:
    net: object
    episode: object
    policy: DistancePolicy = field(default_factory=lambda: parse_policy("BP"))
    scheduler: SchedulerKind = SchedulerKind.GREEDY
    bias: np.ndarray | None = None
    seed: int | None = None
    # "backlogged": only commodities queued at the sender compete for a link;
    # "all": plain argmax over every commodity
    commodities: str = "backlogged"

    @property
    def horizon(self) -> int:
        return self.episode.horizon


@dataclass
class SlotTrace:
    num_slots: int
    schedule: np.ndarray  # (T, E) bool
    arrivals: np.ndarray  # (T,) packets arrived per slot
    deliveries: np.ndarray  # (T,) packets delivered per slot
    backlog: np.ndarray  # (T,) total queued packets at the end of each slot
    # one row per transmission: slot, link, sender, receiver, commodity, count
    transmissions: np.ndarray
    # one row per delivered run: birth slot, delivery slot, count
    delivered_runs: np.ndarray
    # one row per run still queued at T: birth slot, count
    undelivered_runs: np.ndarray

    def equals(self, other: "SlotTrace") -> bool:
        return self.num_slots == other.num_slots and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in (
                "schedule",
                "arrivals",
                "deliveries",
                "backlog",
                "transmissions",
                "delivered_runs",
                "undelivered_runs",
            )
        )

    def write_csv(self, path) -> None:
        hdr = "slot,link,sender,receiver,commodity,count"
        np.savetxt(path, self.transmissions, fmt="%d", delimiter=",", header=hdr, comments="")


@dataclass
class EpisodeMetrics:
    mean_delay: float
    delivery_rate: float
    arrived: int
    delivered: int
    backlog: np.ndarray
    schedule_frequency: np.ndarray


def compute_metrics(trace: SlotTrace, T: int | None = None) -> EpisodeMetrics:
    """Delay is averaged over every arrived packet; packets still queued at
    the horizon count T - birth."""
    T = trace.num_slots if T is None else T
    d = trace.delivered_runs
    u = trace.undelivered_runs
    delivered = int(d[:, 2].sum()) if len(d) else 0
    pending = int(u[:, 1].sum()) if len(u) else 0
    arrived = delivered + pending
    total = 0
    if len(d):
        total += int(((d[:, 1] - d[:, 0]) * d[:, 2]).sum())
    if len(u):
        total += int(((T - u[:, 0]) * u[:, 1]).sum())
    freq = trace.schedule.mean(axis=0) if trace.num_slots else np.zeros(trace.schedule.shape[1])
    return EpisodeMetrics(
        mean_delay=total / arrived if arrived else 0.0,
        delivery_rate=delivered / arrived if arrived else 1.0,
        arrived=arrived,
        delivered=delivered,
        backlog=trace.backlog.copy(),
        schedule_frequency=freq,
    )


def run_episode(cfg: EpisodeConfig, check: bool = True, deep_check: bool = False):
    """Simulate one episode; returns (EpisodeMetrics, SlotTrace).

    Each slot: arrivals, per-link commodity/weight decisions, utilities,
    independent-set schedule, transmissions.
    """
    net, ep = cfg.net, cfg.episode
    T = ep.horizon
    E = net.num_links
    edges = net.edges
    cg = net.conflict_graph
    sched = get_scheduler(cfg.scheduler)
    bias = cfg.bias
    if cfg.commodities not in ("backlogged", "all"):
        raise ValueError(f"unknown commodity rule {cfg.commodities!r}")
    backlogged_only = cfg.commodities == "backlogged"
    if bias is not None and (np.any(bias < 0) or np.any(np.diagonal(bias) != 0)):
        raise InvariantError("bias table must be non-negative with zero diagonal")
    rates = ep.rates.realized_rates
    state = QueueState(net.num_nodes)

    schedule = np.zeros((T, E), dtype=bool)
    arrivals = ep.arrivals.sum(axis=0).astype(np.int64)
    deliveries = np.zeros(T, dtype=np.int64)
    backlog = np.zeros(T, dtype=np.int64)
    tx_rows = []
    dl_rows = []

    for t in range(T):
        state.apply_arrivals(ep.arrivals[:, t], ep.flows, t)
        if bias is None:
            dec = classical_decisions(state.backlog, edges)
        else:
            dec = biased_decisions(state.backlog, bias, edges, backlogged_only)
        util = build_utilities(dec, rates[:, t])
        s = sched(cg, util)
        if check and not cg.is_independent(s):
            raise InvariantError(f"slot {t}: schedule is not independent")
        out = commit_transmissions(state, s, dec, rates[:, t])
        schedule[t] = s
        for x in out.transmissions:
            tx_rows.append((t, x.link, x.sender, x.receiver, x.commodity, x.count))
        for birth, n in out.delivered:
            dl_rows.append((birth, t, n))
        deliveries[t] = out.delivered_count
        backlog[t] = state.arrived - state.delivered
        if check:
            try:
                state.check(deep=deep_check)
            except InvariantError as exc:
                raise InvariantError(f"slot {t}: {exc}") from exc

    und = sorted(state.in_flight())
    trace = SlotTrace(
        num_slots=T,
        schedule=schedule,
        arrivals=arrivals,
        deliveries=deliveries,
        backlog=backlog,
        transmissions=np.array(tx_rows, dtype=np.int64).reshape(-1, 6),
        delivered_runs=np.array(dl_rows, dtype=np.int64).reshape(-1, 3),
        undelivered_runs=np.array(und, dtype=np.int64).reshape(-1, 2),
    )
    return compute_metrics(trace, T), trace


# -- benchmark -----------------------------------------------------------------


def derive_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass
class BenchmarkSpec:
    sizes: tuple = (20, 40, 60)
    policies: tuple = ("BP", "SP-Hop", "EDR-10")
    instances: int = 10
    episodes: int = 10
    conflict_model: ConflictModel = ConflictModel.UNIT_DISK
    T: int = 1000
    scheduler: SchedulerKind = SchedulerKind.GREEDY
    seed: int = 0
    arrival_rates: tuple | None = None  # fixed per-flow rates for load sweeps
    commodities: str = "backlogged"


def _instance_rows(args):
    spec, n, k, params = args
    from .gnn import predict_duty_cycles

    net = generate_network(
        TopologyConfig(n, conflict_model=spec.conflict_model, rng_seed=derive_seed(spec.seed, n, k))
    )
    policies = [parse_policy(p) for p in spec.policies]
    duty = None
    if any(p.needs_duty for p in policies):
        if params is None:
            raise ValueError("duty-cycle policies need trained GNN parameters")
        duty = predict_duty_cycles(params, net.laplacian())
    lams = spec.arrival_rates if spec.arrival_rates is not None else (None,)
    rows = []
    for lam in lams:
        for m in range(spec.episodes):
            ep_seed = derive_seed(spec.seed, n, k, m, 1)
            ep = sample_episode(net, spec.T, ep_seed, fixed_arrival_rate=lam)
            for p in policies:
                table = bias_table(p, net, duty, ep.rates)
                metrics, _ = run_episode(
                    EpisodeConfig(net, ep, p, spec.scheduler, table, ep_seed, spec.commodities)
                )
                rows.append(
                    {
                        "num_nodes": n,
                        "conflict_model": spec.conflict_model.value,
                        "policy": p.name,
                        "arrival_rate": "" if lam is None else lam,
                        "instance": k,
                        "episode": m,
                        "seed": ep_seed,
                        "mean_delay": metrics.mean_delay,
                        "delivery_rate": metrics.delivery_rate,
                    }
                )
    return rows


def run_benchmark(spec: BenchmarkSpec, params=None, jobs: int = 1) -> list[dict]:
    """One row per (size, instance, episode, policy). All policies on a test
    instance see the same flows, arrivals and link rates."""
    spec.conflict_model = ConflictModel(spec.conflict_model)
    spec.scheduler = SchedulerKind(spec.scheduler)
    if not spec.policies:
        raise ValueError("no policies requested")
    tasks = [(spec, n, k, params) for n in spec.sizes for k in range(spec.instances)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            chunks = list(pool.map(_instance_rows, tasks))
    else:
        chunks = []
        for task in tasks:
            chunks.append(_instance_rows(task))
            log.info("benchmark: |V|=%d instance %d done", task[1], task[2])
    rows = [r for c in chunks for r in c]
    rows.sort(key=lambda r: (r["num_nodes"], str(r["arrival_rate"]), r["policy"], r["instance"], r["episode"]))
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Per (num_nodes, arrival_rate, policy): means over episodes, plus the
    standard error across instance means."""
    groups: dict = {}
    for r in rows:
        key = (r["num_nodes"], r["conflict_model"], r["arrival_rate"], r["policy"])
        groups.setdefault(key, {}).setdefault(r["instance"], []).append(r)
    out = []
    for (n, model, lam, pol), by_inst in sorted(groups.items(), key=lambda kv: (kv[0][0], str(kv[0][2]), kv[0][3])):
        inst_delay = np.array([np.mean([r["mean_delay"] for r in v]) for _, v in sorted(by_inst.items())])
        inst_rate = np.array([np.mean([r["delivery_rate"] for r in v]) for _, v in sorted(by_inst.items())])
        k = len(inst_delay)
        se = (lambda a: float(a.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0)
        out.append(
            {
                "num_nodes": n,
                "conflict_model": model,
                "arrival_rate": lam,
                "policy": pol,
                "instances": k,
                "mean_delay": float(inst_delay.mean()),
                "delay_se": se(inst_delay),
                "delivery_rate": float(inst_rate.mean()),
                "delivery_se": se(inst_rate),
            }
        )
    return out

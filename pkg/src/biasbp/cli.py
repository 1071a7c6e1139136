"""Command-line entry points: train, benchmark, episode, inspect-bias.

Settings come from built-in defaults, then an optional flat JSON file
(--config), then command-line flags. Flag names mirror config keys with
dashes in place of underscores.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bias import bias_table, link_distances, parse_policy, write_bias_csv
from .gnn import GnnParams, TrainConfig, predict_duty_cycles, train
from .routing import InvariantError
from .scheduler import SchedulerKind
from .simulator import BenchmarkSpec, EpisodeConfig, derive_seed, run_benchmark, run_episode, summarize
from .topology import ConflictModel, NetworkInstance, TopologyConfig, TopologyError, generate_network
from .traffic import sample_episode

log = logging.getLogger("biasbp")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "policy": ["BP", "SP-Hop", "EDR-10", "SP-10rbar/r"],
    "nodes": [20, 40, 60],
    "conflict_model": "unitdisk",
    "slots": 1000,
    "checkpoint": None,
    "out": None,
    "instances": 10,
    "episodes": 10,
    "arrival_rates": None,
    "scheduler": "greedy",
    "commodities": "backlogged",
    "instance": 0,
    "instance_file": None,
    "train_episodes": 100,
    "train_nodes": [20, 30, 40, 50, 60],
    "lr": 1e-3,
    "steps_per_episode": 4,
    "batch_size": 8,
    "buffer_capacity": 64,
}

LIST_KEYS = {"policy": str, "nodes": int, "arrival_rates": float, "train_nodes": int}


class ConfigError(ValueError):
    pass


def _split(text: str, kind):
    try:
        return [kind(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad list value {text!r}: {exc}") from None


def _coerce(key, value):
    if value is None:
        return None
    if key in LIST_KEYS:
        if isinstance(value, str):
            return _split(value, LIST_KEYS[key])
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list")
        try:
            return [LIST_KEYS[key](v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"bad entry in {key}: {value!r}") from None
    default = DEFAULTS[key]
    if isinstance(default, bool) or default is None:
        return value
    try:
        return type(default)(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} expects {type(default).__name__}, got {value!r}") from None


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a flat JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update({k: _coerce(k, v) for k, v in loaded.items()})
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = _coerce(key, v)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if not cfg["policy"]:
        raise ConfigError("policy list is empty")
    if not cfg["nodes"]:
        raise ConfigError("node list is empty")
    try:
        for p in cfg["policy"]:
            parse_policy(p)
        ConflictModel(cfg["conflict_model"])
        SchedulerKind(cfg["scheduler"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["commodities"] not in ("backlogged", "all"):
        raise ConfigError(f"commodities must be 'backlogged' or 'all', got {cfg['commodities']!r}")
    for key in ("slots", "instances", "episodes", "jobs", "train_episodes", "batch_size", "buffer_capacity", "steps_per_episode"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be at least 1")
    if any(n < 2 for n in cfg["nodes"] + cfg["train_nodes"]):
        raise ConfigError("networks need at least 2 nodes")
    if cfg["arrival_rates"] is not None and any(r < 0 for r in cfg["arrival_rates"]):
        raise ConfigError("arrival rates must be non-negative")
    if cfg["lr"] <= 0:
        raise ConfigError("lr must be positive")


# keys that change where or how fast results are produced, not the results
EXECUTION_KEYS = ("jobs", "out")


def config_hash(cfg: dict) -> str:
    key = {k: v for k, v in cfg.items() if k not in EXECUTION_KEYS}
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:12]


def metadata_line(cfg: dict) -> str:
    return f"biasbp {__version__} seed={cfg['seed']} config={config_hash(cfg)}"


def _write_table(path, rows: list[dict], cfg: dict, columns=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        fh.write(f"# {metadata_line(cfg)}\n")
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _needs_duty(cfg) -> bool:
    return any(parse_policy(p).needs_duty for p in cfg["policy"])


def _load_params(cfg, required: bool):
    path = cfg["checkpoint"]
    if path is None:
        if required:
            raise ConfigError("duty-cycle policies need --checkpoint")
        return None
    if not Path(path).exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    try:
        return GnnParams.load(path)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from None


def _instance(cfg) -> NetworkInstance:
    if cfg["instance_file"]:
        return NetworkInstance.load(cfg["instance_file"])
    n = cfg["nodes"][0]
    seed = derive_seed(cfg["seed"], n, cfg["instance"])
    return generate_network(TopologyConfig(n, conflict_model=ConflictModel(cfg["conflict_model"]), rng_seed=seed))


def _episode(cfg, net):
    # the same draw as benchmark episode 0 of this instance
    seed = derive_seed(cfg["seed"], net.num_nodes, cfg["instance"], 0, 1)
    lam = cfg["arrival_rates"][0] if cfg["arrival_rates"] else None
    return sample_episode(net, cfg["slots"], seed, fixed_arrival_rate=lam), seed


# -- commands -------------------------------------------------------------------


def cmd_train(cfg: dict) -> int:
    if not cfg["checkpoint"]:
        raise ConfigError("train needs --checkpoint for the output model")
    tc = TrainConfig(
        episodes=cfg["train_episodes"],
        sizes=tuple(cfg["train_nodes"]),
        conflict_model=cfg["conflict_model"],
        T=cfg["slots"],
        lr=cfg["lr"],
        buffer_capacity=cfg["buffer_capacity"],
        batch_size=cfg["batch_size"],
        steps_per_episode=cfg["steps_per_episode"],
        scheduler=cfg["scheduler"],
        commodities=cfg["commodities"],
        seed=cfg["seed"],
    )
    result = train(tc)
    Path(cfg["checkpoint"]).parent.mkdir(parents=True, exist_ok=True)
    result.params.save(cfg["checkpoint"])
    if cfg["out"]:
        rows = [
            {"episode": k, "episode_loss": a, "batch_loss": b}
            for k, (a, b) in enumerate(zip(result.episode_loss, result.batch_loss))
        ]
        _write_table(cfg["out"], rows, cfg, ["episode", "episode_loss", "batch_loss"])
    print(f"checkpoint written to {cfg['checkpoint']}; final loss {result.episode_loss[-1]:.5f}")
    return EXIT_OK


ROW_COLUMNS = [
    "num_nodes", "conflict_model", "policy", "arrival_rate", "instance", "episode", "seed",
    "mean_delay", "delivery_rate",
]
SUMMARY_COLUMNS = [
    "num_nodes", "conflict_model", "arrival_rate", "policy", "instances",
    "mean_delay", "delay_se", "delivery_rate", "delivery_se",
]


def cmd_benchmark(cfg: dict) -> int:
    params = _load_params(cfg, _needs_duty(cfg))
    spec = BenchmarkSpec(
        sizes=tuple(cfg["nodes"]),
        policies=tuple(cfg["policy"]),
        instances=cfg["instances"],
        episodes=cfg["episodes"],
        conflict_model=ConflictModel(cfg["conflict_model"]),
        T=cfg["slots"],
        scheduler=SchedulerKind(cfg["scheduler"]),
        seed=cfg["seed"],
        arrival_rates=tuple(cfg["arrival_rates"]) if cfg["arrival_rates"] else None,
        commodities=cfg["commodities"],
    )
    rows = run_benchmark(spec, params, jobs=cfg["jobs"])
    summary = summarize(rows)
    if cfg["out"]:
        out = Path(cfg["out"])
        _write_table(out, rows, cfg, ROW_COLUMNS)
        _write_table(out.with_suffix(".summary.csv"), summary, cfg, SUMMARY_COLUMNS)
    w = csv.DictWriter(sys.stdout, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(summary)
    return EXIT_OK


def cmd_episode(cfg: dict) -> int:
    policy = parse_policy(cfg["policy"][0])
    params = _load_params(cfg, policy.needs_duty)
    net = _instance(cfg)
    ep, seed = _episode(cfg, net)
    duty = predict_duty_cycles(params, net.laplacian()) if policy.needs_duty else None
    table = bias_table(policy, net, duty, ep.rates)
    metrics, trace = run_episode(
        EpisodeConfig(net, ep, policy, SchedulerKind(cfg["scheduler"]), table, seed, cfg["commodities"]),
        deep_check=True,
    )
    if cfg["out"]:
        Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
        with open(cfg["out"], "w") as fh:
            fh.write(f"# {metadata_line(cfg)}\n")
        with open(cfg["out"], "a") as fh:
            np.savetxt(fh, trace.transmissions, fmt="%d", delimiter=",",
                       header="slot,link,sender,receiver,commodity,count", comments="")
    print(json.dumps({
        "num_nodes": net.num_nodes,
        "num_links": net.num_links,
        "policy": policy.name,
        "seed": seed,
        "arrived": metrics.arrived,
        "delivered": metrics.delivered,
        "mean_delay": metrics.mean_delay,
        "delivery_rate": metrics.delivery_rate,
    }))
    return EXIT_OK


def cmd_inspect_bias(cfg: dict) -> int:
    """Writes links.csv (per-link duty cycle and distance) and bias.csv into
    the --out directory."""
    if not cfg["out"]:
        raise ConfigError("inspect-bias needs --out for the output directory")
    policy = parse_policy(cfg["policy"][0])
    params = _load_params(cfg, policy.needs_duty)
    net = _instance(cfg)
    ep, _ = _episode(cfg, net)
    duty = predict_duty_cycles(params, net.laplacian()) if params is not None else None
    d = link_distances(policy, net.num_links, duty, ep.rates)
    if d is None:
        d = np.zeros(net.num_links)
    table = bias_table(policy, net, duty, ep.rates)
    if table is None:
        table = np.zeros((net.num_nodes, net.num_nodes))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    deg = net.conflict_graph.degrees
    rows = [
        {
            "link": e,
            "node_a": int(net.edges[e, 0]),
            "node_b": int(net.edges[e, 1]),
            "conflict_degree": int(deg[e]),
            "long_term_rate": float(ep.rates.long_term_rates[e]),
            "duty": "" if duty is None else float(duty[e]),
            "distance": float(d[e]),
        }
        for e in range(net.num_links)
    ]
    _write_table(out / "links.csv", rows, cfg)
    write_bias_csv(table, out / "bias.csv", f"{metadata_line(cfg)} policy={policy.name}")
    print(f"{net.num_links} links, policy {policy.name}: wrote {out / 'links.csv'} and {out / 'bias.csv'}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "benchmark": cmd_benchmark,
    "episode": cmd_episode,
    "inspect-bias": cmd_inspect_bias,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON object with any of the keys below")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes for benchmarks")
    common.add_argument("--policy", help="comma-separated policy names, e.g. BP,SP-Hop,EDR-10")
    common.add_argument("--nodes", help="comma-separated network sizes")
    common.add_argument("--conflict-model", choices=[m.value for m in ConflictModel])
    common.add_argument("--slots", type=int, help="episode horizon T")
    common.add_argument("--checkpoint", help="GNN checkpoint (written by train, read otherwise)")
    common.add_argument("--out", help="output path")
    common.add_argument("--instances", type=int)
    common.add_argument("--episodes", type=int)
    common.add_argument("--arrival-rates", help="comma-separated per-flow rates for a load sweep")
    common.add_argument("--scheduler", choices=[k.value for k in SchedulerKind])
    common.add_argument("--commodities", choices=["backlogged", "all"])
    common.add_argument("--instance", type=int, help="instance index for episode/inspect-bias")
    common.add_argument("--instance-file", help="network instance JSON instead of a generated one")
    common.add_argument("--train-episodes", type=int)
    common.add_argument("--train-nodes", help="comma-separated training network sizes")
    common.add_argument("--lr", type=float)
    common.add_argument("--steps-per-episode", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--buffer-capacity", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="biasbp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"biasbp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the duty-cycle GNN")
    sub.add_parser("benchmark", parents=[common], help="multi-policy delay and delivery benchmark")
    sub.add_parser("episode", parents=[common], help="simulate one episode")
    sub.add_parser("inspect-bias", parents=[common], help="dump duty cycles, distances and the bias table")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (OSError, TopologyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

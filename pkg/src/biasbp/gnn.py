"""Graph convolutional network over the conflict graph that predicts link
duty cycles, with hand-written backprop, Adam and a replay training loop.

Layer l computes ``X_l = act(X_{l-1} @ W0 + (L @ X_{l-1}) @ W1)`` where L is
the normalized Laplacian of the conflict graph, hidden layers use leaky ReLU
and the last layer a row-wise softmax. The input is a single all-ones column
and the duty cycle is column 0 of the output.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "biasbp-gnn"
CHECKPOINT_VERSION = 1


@dataclass
class GnnParams:
    widths: tuple  # g_0 .. g_L with g_0 = 1 and g_L = 2
    theta0: list  # per layer, (g_{l-1}, g_l)
    theta1: list
    leaky_slope: float = 0.01

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.widths[0] != 1 or self.widths[-1] != 2:
            raise ValueError("input width must be 1 and output width 2")
        for l, (a, b) in enumerate(zip(self.theta0, self.theta1)):
            shape = (self.widths[l], self.widths[l + 1])
            if a.shape != shape or b.shape != shape:
                raise ValueError(f"layer {l + 1} expects parameter shape {shape}")

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1

    def arrays(self) -> list:
        return [*self.theta0, *self.theta1]

    def copy(self) -> "GnnParams":
        return GnnParams(
            self.widths,
            [a.copy() for a in self.theta0],
            [b.copy() for b in self.theta1],
            self.leaky_slope,
        )

    # -- checkpoint ---------------------------------------------------------

    def to_dict(self) -> dict:
        enc = lambda a: [float(v).hex() for v in a.ravel()]  # noqa: E731
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "widths": list(self.widths),
            "leaky_slope": float(self.leaky_slope).hex(),
            "theta0": [enc(a) for a in self.theta0],
            "theta1": [enc(b) for b in self.theta1],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GnnParams":
        if d.get("format") != CHECKPOINT_FORMAT or d.get("version") != CHECKPOINT_VERSION:
            raise ValueError("not a supported GNN checkpoint")
        widths = d["widths"]
        shapes = list(zip(widths[:-1], widths[1:]))
        dec = lambda v, s: np.array([float.fromhex(x) for x in v]).reshape(s)  # noqa: E731
        return cls(
            widths,
            [dec(v, s) for v, s in zip(d["theta0"], shapes)],
            [dec(v, s) for v, s in zip(d["theta1"], shapes)],
            float.fromhex(d["leaky_slope"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "GnnParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_params(widths=(1, 32, 32, 32, 32, 2), seed=None, leaky_slope: float = 0.01) -> GnnParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every matrix."""
    rng = np.random.default_rng(seed)
    t0, t1 = [], []
    for a, b in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(a)
        t0.append(rng.uniform(-bound, bound, size=(a, b)))
        t1.append(rng.uniform(-bound, bound, size=(a, b)))
    return GnnParams(tuple(widths), t0, t1, leaky_slope)


# -- graph operator -------------------------------------------------------------


@dataclass(frozen=True)
class LaplacianOperator:
    """Row-wise view of a normalized Laplacian for fixed-order aggregation.

    ``apply(X)[e] = self_weight[e] * X[e] - sum_k nbr_weight[e, k] * X[nbr[e, k]]``
    with neighbours in ascending id order, which is exactly what
    `aggregate_row` does for a single link.
    """

    dense: np.ndarray
    self_weight: np.ndarray
    nbr_index: list  # per row, ascending neighbour ids
    nbr_weight: list  # per row, positive weights 1/sqrt(d_e d_u)
    _pad_index: np.ndarray = field(repr=False)
    _pad_weight: np.ndarray = field(repr=False)
    _pad_rows: list = field(repr=False)

    @classmethod
    def from_dense(cls, lap) -> "LaplacianOperator":
        lap = np.asarray(lap, dtype=float)
        n = lap.shape[0]
        if lap.shape != (n, n):
            raise ValueError("Laplacian must be square")
        idx, wts = [], []
        for e in range(n):
            row = lap[e].copy()
            row[e] = 0.0
            nz = np.flatnonzero(row)
            idx.append(nz)
            wts.append(-row[nz])
        deg = np.array([len(x) for x in idx], dtype=np.int64)
        width = int(deg.max(initial=0))
        pad_i = np.zeros((n, width), dtype=np.int64)
        pad_w = np.zeros((n, width))
        for e in range(n):
            pad_i[e, : deg[e]] = idx[e]
            pad_w[e, : deg[e]] = wts[e]
        rows = [np.flatnonzero(deg > k) for k in range(width)]
        return cls(lap, np.diagonal(lap).copy(), idx, wts, pad_i, pad_w, rows)

    @property
    def size(self) -> int:
        return len(self.self_weight)

    def apply(self, X: np.ndarray) -> np.ndarray:
        acc = np.zeros_like(X)
        for k, rows in enumerate(self._pad_rows):
            acc[rows] = acc[rows] + self._pad_weight[rows, k, None] * X[self._pad_index[rows, k]]
        return self.self_weight[:, None] * X - acc

    def aggregate_row(self, e: int, x_self: np.ndarray, x_nbrs: np.ndarray) -> np.ndarray:
        return aggregate_local(self.self_weight[e], x_self, self.nbr_weight[e], x_nbrs)


def as_operator(lap) -> LaplacianOperator:
    return lap if isinstance(lap, LaplacianOperator) else LaplacianOperator.from_dense(lap)


def aggregate_local(self_weight: float, x_self, nbr_weights, x_nbrs) -> np.ndarray:
    """One link's Laplacian row times X, from its own and its neighbours' rows
    (neighbours in ascending id order)."""
    acc = np.zeros_like(x_self)
    for w, xu in zip(nbr_weights, x_nbrs):
        acc = acc + w * xu
    return self_weight * x_self - acc


# -- forward / backward ---------------------------------------------------------


def _mix(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    # elementwise products reduced in a fixed order, so a single row gives the
    # same bits as the full matrix
    return (X[:, :, None] * W[None, :, :]).sum(axis=1)


def _leaky(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z > 0, z, slope * z)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def _activate(z, last: bool, slope: float):
    return _softmax(z) if last else _leaky(z, slope)


def forward(params: GnnParams, lap, num_links: int | None = None):
    """Returns (duty cycles x, cache). ``cache["out"]`` is the full softmax
    output with rows [x_e, 1 - x_e]."""
    op = as_operator(lap)
    n = op.size
    if num_links is not None and num_links != n:
        raise ValueError(f"Laplacian is {n}x{n} but {num_links} links were given")
    X = np.ones((n, 1))
    xs, aggs, zs = [X], [], []
    L = params.num_layers
    for l in range(L):
        A = op.apply(X)
        Z = _mix(X, params.theta0[l]) + _mix(A, params.theta1[l])
        X = _activate(Z, l == L - 1, params.leaky_slope)
        aggs.append(A)
        zs.append(Z)
        xs.append(X)
    cache = {"op": op, "x": xs, "agg": aggs, "z": zs, "out": X}
    return X[:, 0].copy(), cache


def forward_local(params: GnnParams, layer: int, x_self, self_weight, nbr_weights, x_nbrs):
    """Layer `layer` (1-based) output for a single link, from the link's
    previous-layer row and those of its conflict neighbours."""
    l = layer - 1
    x_self = np.asarray(x_self, dtype=float).reshape(1, -1)
    x_nbrs = [np.asarray(v, dtype=float).reshape(1, -1) for v in x_nbrs]
    a = aggregate_local(self_weight, x_self, nbr_weights, x_nbrs)
    z = _mix(x_self, params.theta0[l]) + _mix(a, params.theta1[l])
    return _activate(z, l == params.num_layers - 1, params.leaky_slope)[0]


def predict_duty_cycles(params: GnnParams, lap) -> np.ndarray:
    x, _ = forward(params, lap)
    # softmax underflow would break 1/x distances
    return np.maximum(x, np.finfo(float).tiny)


def schedule_target(freq) -> np.ndarray:
    f = np.asarray(freq, dtype=float)
    return np.column_stack([f, 1.0 - f])


def loss(out: np.ndarray, freq) -> float:
    """Squared Frobenius distance to [freq, 1 - freq], divided by link count."""
    r = out - schedule_target(freq)
    return float((r * r).sum() / len(out))


def loss_grad(out: np.ndarray, freq) -> np.ndarray:
    return 2.0 * (out - schedule_target(freq)) / len(out)


def backward(params: GnnParams, cache: dict, grad_out: np.ndarray):
    """Gradients (d theta0 per layer, d theta1 per layer) given dLoss/dOutput."""
    op: LaplacianOperator = cache["op"]
    L = params.num_layers
    g0 = [None] * L
    g1 = [None] * L
    G = grad_out
    for l in range(L - 1, -1, -1):
        Z = cache["z"][l]
        if l == L - 1:
            S = cache["x"][l + 1]
            dZ = S * (G - (G * S).sum(axis=1, keepdims=True))
        else:
            dZ = G * np.where(Z > 0, 1.0, params.leaky_slope)
        X = cache["x"][l]
        A = cache["agg"][l]
        g0[l] = X.T @ dZ
        g1[l] = A.T @ dZ
        if l > 0:
            # the normalized Laplacian is symmetric
            G = dZ @ params.theta0[l].T + op.dense @ (dZ @ params.theta1[l].T)
    return g0, g1


def loss_and_grads(params: GnnParams, batch) -> tuple[float, list, list]:
    """Mean loss and gradients over (laplacian, freq) pairs."""
    total = 0.0
    g0 = [np.zeros_like(a) for a in params.theta0]
    g1 = [np.zeros_like(b) for b in params.theta1]
    for lap, freq in batch:
        _, cache = forward(params, lap)
        total += loss(cache["out"], freq)
        d0, d1 = backward(params, cache, loss_grad(cache["out"], freq))
        for l in range(params.num_layers):
            g0[l] += d0[l]
            g1[l] += d1[l]
    k = len(batch)
    return total / k, [g / k for g in g0], [g / k for g in g1]


# -- optimizer ------------------------------------------------------------------


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list | None = None
        self.v: list | None = None

    def step(self, params: list, grads: list) -> None:
        """In-place update of the arrays in `params`."""
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params: GnnParams, g0: list, g1: list, opt: Adam) -> None:
    opt.step(params.arrays(), [*g0, *g1])


class ReplayBuffer:
    """Bounded FIFO memory of (laplacian operator, schedule frequency) tuples."""

    def __init__(self, capacity: int = 64, seed=None):
        self.capacity = capacity
        self._items: list = []
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self._items)

    def add(self, lap, freq) -> None:
        freq = np.array(freq, dtype=float)
        freq.setflags(write=False)
        self._items.append((as_operator(lap), freq))
        if len(self._items) > self.capacity:
            self._items.pop(0)

    def sample(self, batch_size: int) -> list:
        k = min(batch_size, len(self._items))
        idx = self._rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in sorted(idx)]


# -- training loop --------------------------------------------------------------


@dataclass
class TrainConfig:
    episodes: int = 100
    sizes: tuple = (20, 30, 40, 50, 60)
    conflict_model: str = "unitdisk"
    T: int = 1000
    widths: tuple = (1, 32, 32, 32, 32, 2)
    leaky_slope: float = 0.01
    lr: float = 1e-3
    buffer_capacity: int = 64
    batch_size: int = 8
    steps_per_episode: int = 4
    scheduler: str = "greedy"
    commodities: str = "backlogged"
    seed: int = 0


@dataclass
class TrainResult:
    params: GnnParams
    # per episode: loss of the fresh tuple before the update, and batch loss
    episode_loss: list = field(default_factory=list)
    batch_loss: list = field(default_factory=list)


def collect_tuple(params: GnnParams, net, episode, scheduler="greedy", commodities="backlogged"):
    """Run biased BP with distances 1/x from the current model; returns the
    Laplacian operator and the per-link schedule frequency."""
    from .bias import apsp_bias
    from .simulator import EpisodeConfig, run_episode
    from .bias import parse_policy

    op = LaplacianOperator.from_dense(net.laplacian())
    x = predict_duty_cycles(params, op)
    table = apsp_bias(net.graph, 1.0 / x)
    metrics, _ = run_episode(
        EpisodeConfig(net, episode, parse_policy("SP-1/x"), scheduler, table, None, commodities)
    )
    return op, metrics.schedule_frequency


def initial_params(cfg: TrainConfig) -> GnnParams:
    """The parameters `train` starts from when none are given."""
    from .simulator import derive_seed

    return init_params(cfg.widths, derive_seed(cfg.seed, 11), cfg.leaky_slope)


def train(cfg: TrainConfig, params: GnnParams | None = None, progress=None) -> TrainResult:
    from .simulator import derive_seed
    from .topology import TopologyConfig, generate_network
    from .traffic import sample_episode

    rng = np.random.default_rng(derive_seed(cfg.seed, 7))
    if params is None:
        params = initial_params(cfg)
    opt = Adam(lr=cfg.lr)
    buf = ReplayBuffer(cfg.buffer_capacity, derive_seed(cfg.seed, 13))
    result = TrainResult(params)
    for k in range(cfg.episodes):
        n = int(rng.choice(cfg.sizes))
        net = generate_network(
            TopologyConfig(n, conflict_model=cfg.conflict_model, rng_seed=derive_seed(cfg.seed, 17, k))
        )
        ep = sample_episode(net, cfg.T, derive_seed(cfg.seed, 19, k))
        op, freq = collect_tuple(params, net, ep, cfg.scheduler, cfg.commodities)
        _, cache = forward(params, op)
        result.episode_loss.append(loss(cache["out"], freq))
        buf.add(op, freq)
        for _ in range(cfg.steps_per_episode):
            batch_loss, g0, g1 = loss_and_grads(params, buf.sample(cfg.batch_size))
            adam_step(params, g0, g1, opt)
        result.batch_loss.append(batch_loss)
        log.info("episode %d |V|=%d loss=%.5f batch=%.5f", k, n, result.episode_loss[-1], batch_loss)
        if progress is not None:
            progress(k, result)
    return result

"""Round-based federated training: FedAvg, FedProx, FedPeWS and FedPeWS-Fixed.

All randomness is drawn from keyed streams (see ``fedpews.rng``), so running
clients in threads or sequentially gives bitwise-identical trajectories.
"""
from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fedpews import data as D
from fedpews.masking import (
    expand_to_param_mask,
    fixed_partition_masks,
    sample_neuron_mask,
    sigmoid_probs,
    ste_score_update,
)
from fedpews.metrics import RoundRecord, RunLog, model_digest
from fedpews.nncore import ModelSpec, backward, evaluate, forward, init_params, sgd_step
from fedpews.rng import stream

ALGORITHMS = ("fedavg", "fedprox", "fedpews", "fedpews_fixed")
BASE_OPTIMIZERS = ("fedavg", "fedprox")
THETA_CLAMP = 1e-6


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "fedavg"
    base_optimizer: str = "fedavg"     # post-warmup behaviour of the fedpews variants
    rounds: int = 400
    warmup_rounds: int = 0
    local_steps: int = 10
    lr_local: float = 0.01
    lr_global: float = 1.0
    lr_mask: float = 0.1
    diversity: float = 0.0             # weight of the mask diversity term
    prox_mu: float = 0.01
    batch_size: int = 8
    n_clients: int = 2
    participation_rate: float = 1.0
    fixed_fractions: tuple[float, ...] | None = None
    seed: int = 1
    target_accuracy: float = 99.0
    dataset: str = "synthetic-3.2k"    # synthetic-32k | synthetic-3.2k | path to a PEWS file
    partition: str = "even-odd"        # even-odd | per-class | iid | dirichlet:<alpha>
    data_seed: int = 0
    test_seed: int = 1
    test_size: int = D.DEFAULT_TEST_SIZE
    cluster_std: float = D.DEFAULT_CLUSTER_STD
    hidden: tuple[int, ...] = (32, 64, 128, 32)
    init_score: float = 0.0
    eval_every: int = 1
    client_eval: bool = False
    client_workers: int = 1

    def __post_init__(self):
        def need(ok, key, msg):
            if not ok:
                raise ConfigError(key, msg)

        need(self.algorithm in ALGORITHMS, "algorithm", f"must be one of {ALGORITHMS}")
        need(self.base_optimizer in BASE_OPTIMIZERS, "base_optimizer", f"must be one of {BASE_OPTIMIZERS}")
        need(self.rounds >= 0, "rounds", "must be >= 0")
        need(0 <= self.warmup_rounds <= self.rounds, "warmup_rounds", "must satisfy 0 <= W <= T")
        need(self.local_steps >= 1, "local_steps", "must be >= 1")
        for key in ("lr_local", "lr_global", "lr_mask"):
            need(getattr(self, key) > 0, key, "must be > 0")
        need(self.diversity >= 0, "diversity", "must be >= 0")
        need(self.prox_mu >= 0, "prox_mu", "must be >= 0")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.n_clients >= 1, "n_clients", "must be >= 1")
        need(0 < self.participation_rate <= 1, "participation_rate", "must be in (0, 1]")
        need(0 < self.target_accuracy <= 100, "target_accuracy", "must be in (0, 100]")
        need(self.test_size > 0 and self.test_size % 16 == 0, "test_size", "must be a positive multiple of 16")
        need(self.cluster_std > 0, "cluster_std", "must be > 0")
        need(self.eval_every >= 1, "eval_every", "must be >= 1")
        need(self.client_workers >= 1, "client_workers", "must be >= 1")
        need(all(h >= 1 for h in self.hidden), "hidden", "layer widths must be positive")
        if self.fixed_fractions is not None:
            need(len(self.fixed_fractions) == self.n_clients, "fixed_fractions", "need one fraction per client")
            need(all(f > 0 for f in self.fixed_fractions) and math.isclose(sum(self.fixed_fractions), 1.0),
                 "fixed_fractions", "must be positive and sum to 1")
        try:
            partition_kind(self.partition)
        except ValueError as e:
            raise ConfigError("partition", str(e)) from None

    @property
    def warmup_fraction(self) -> float:
        return self.warmup_rounds / self.rounds if self.rounds else 0.0

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def partition_kind(partition: str) -> tuple[str, float | None]:
    if partition in ("even-odd", "per-class", "iid"):
        return partition, None
    if partition.startswith("dirichlet:"):
        alpha = float(partition.split(":", 1)[1])
        if alpha <= 0:
            raise ValueError("dirichlet alpha must be > 0")
        return "dirichlet", alpha
    raise ValueError(f"unknown partition {partition!r}")


@dataclass
class ClientState:
    id: int
    shard: D.Shard
    batches: D.BatchIterator | None
    params: np.ndarray | None = None
    scores: np.ndarray | None = None       # fedpews only
    theta: np.ndarray | None = None        # last uploaded sigmoid(scores)
    fixed_mask: np.ndarray | None = None   # fedpews_fixed only (neuron level)


@dataclass
class ServerState:
    params: np.ndarray
    theta_g: np.ndarray | None = None
    # who contributed to the current theta_g; needed to exclude a client's own share
    theta_contributors: tuple[int, ...] = ()
    round: int = 0


@dataclass
class Federation:
    config: ExperimentConfig
    spec: ModelSpec
    train: D.Dataset
    test: D.Dataset
    server: ServerState
    clients: list[ClientState]
    log: RunLog = field(default=None)
    _last_eval: tuple[float, float] | None = None

    @property
    def uses_masks(self) -> bool:
        return self.config.algorithm in ("fedpews", "fedpews_fixed")


def load_train_set(cfg: ExperimentConfig) -> D.Dataset:
    if cfg.dataset == "synthetic-32k":
        return D.gen_synthetic(32000, cfg.data_seed, cfg.cluster_std)
    if cfg.dataset == "synthetic-3.2k":
        return D.gen_synthetic(3200, cfg.data_seed, cfg.cluster_std)
    path = Path(cfg.dataset)
    if not path.exists():
        raise ConfigError("dataset", f"no such dataset file {cfg.dataset!r}")
    return D.load_dataset(path)


def make_shards(cfg: ExperimentConfig, train: D.Dataset) -> list[D.Shard]:
    kind, alpha = partition_kind(cfg.partition)
    if kind == "even-odd":
        if cfg.n_clients != 2:
            raise ConfigError("n_clients", "even-odd partition needs exactly 2 clients")
        return D.split_by_class(train, D.even_odd_assignment(train.class_count))
    if kind == "per-class":
        if cfg.n_clients != train.class_count:
            raise ConfigError("n_clients", f"per-class partition needs {train.class_count} clients")
        return D.split_by_class(train, D.per_class_assignment(train.class_count))
    if kind == "iid":
        order = stream(cfg.data_seed, "iid").permutation(len(train))
        return [D.Shard(i, np.sort(p)) for i, p in enumerate(np.array_split(order, cfg.n_clients))]
    return D.dirichlet_partition(train, cfg.n_clients, alpha, cfg.data_seed)


def init_experiment(cfg: ExperimentConfig, train: D.Dataset | None = None,
                    test: D.Dataset | None = None) -> Federation:
    train = load_train_set(cfg) if train is None else train
    test = D.gen_synthetic(cfg.test_size, cfg.test_seed, cfg.cluster_std) if test is None else test
    spec = ModelSpec.from_dims((train.features.shape[1], *cfg.hidden, train.class_count))
    shards = make_shards(cfg, train)
    server = ServerState(params=init_params(spec, cfg.seed))
    clients = [
        ClientState(s.owner, s, D.BatchIterator(s, train, cfg.batch_size, cfg.seed) if len(s) else None)
        for s in shards
    ]
    if cfg.algorithm == "fedpews":
        s0 = np.full(spec.h, cfg.init_score)
        server.theta_g = sigmoid_probs(s0)
        server.theta_contributors = tuple(range(cfg.n_clients))
        for c in clients:
            c.scores = s0.copy()
            c.theta = server.theta_g.copy()
    elif cfg.algorithm == "fedpews_fixed":
        for c, m in zip(clients, fixed_partition_masks(spec, cfg.n_clients, cfg.fixed_fractions)):
            c.fixed_mask = m
    log = RunLog(config=cfg.as_dict())
    return Federation(cfg, spec, train, test, server, clients, log)


def exclusion_prob(theta_g: np.ndarray, theta_i: np.ndarray, n: int) -> np.ndarray:
    """Mean probability of the other n-1 contributors, given theta_g is the mean over all n."""
    if n < 2:
        raise ValueError("exclusion needs at least two contributors")
    return np.clip((n * theta_g - theta_i) / (n - 1), THETA_CLAMP, 1.0 - THETA_CLAMP)


def client_exclusion(server: ServerState, client: ClientState) -> np.ndarray:
    contributors = server.theta_contributors
    if client.id not in contributors:
        return server.theta_g
    if len(contributors) < 2:
        # nobody else to differ from: a zero diversity gradient
        return client.theta
    return exclusion_prob(server.theta_g, client.theta, len(contributors))


def update_global_theta(server: ServerState, uploads: dict[int, np.ndarray]) -> np.ndarray:
    """theta_g <- mean of the uploaded client probabilities (unchanged if none uploaded)."""
    if uploads:
        ids = sorted(uploads)
        server.theta_g = np.mean([uploads[i] for i in ids], axis=0)
        server.theta_contributors = tuple(ids)
    return server.theta_g


def _mask_rng(cfg, client_id, t, k, purpose):
    return stream(cfg.seed, "mask", client_id, t, k, purpose)


def local_round_pews(spec: ModelSpec, client: ClientState, x_g: np.ndarray, theta_excl: np.ndarray,
                     cfg: ExperimentConfig, t: int):
    """Alternate mask-score and weight updates for K steps.

    Returns ``(params, param_mask, theta, scores)``; the client is not mutated.
    """
    x = x_g.copy()
    s = client.scores
    for k in range(1, cfg.local_steps + 1):
        X, y = next(client.batches)
        # mask scores, weights frozen
        theta = sigmoid_probs(s)
        m = sample_neuron_mask(theta, _mask_rng(cfg, client.id, t, k, "scores"))
        _, grad_mask = backward(spec, x, m, forward(spec, x, m, X), y)
        s = ste_score_update(s, grad_mask, theta, theta_excl, cfg.diversity, cfg.lr_mask)
        # weights, scores frozen; same batch
        m = sample_neuron_mask(sigmoid_probs(s), _mask_rng(cfg, client.id, t, k, "weights"))
        grad_x, _ = backward(spec, x, m, forward(spec, x, m, X), y)
        x = sgd_step(x, grad_x, cfg.lr_local)
    theta = sigmoid_probs(s)
    upload = sample_neuron_mask(theta, _mask_rng(cfg, client.id, t, cfg.local_steps, "upload"))
    return x, expand_to_param_mask(upload, spec), theta, s


def local_round_fixed(spec: ModelSpec, client: ClientState, x_g: np.ndarray, cfg: ExperimentConfig):
    x = x_g.copy()
    for _ in range(cfg.local_steps):
        X, y = next(client.batches)
        grad_x, _ = backward(spec, x, client.fixed_mask, forward(spec, x, client.fixed_mask, X), y)
        x = sgd_step(x, grad_x, cfg.lr_local)
    return x, expand_to_param_mask(client.fixed_mask, spec)


def local_round_standard(spec: ModelSpec, client: ClientState, x_g: np.ndarray, cfg: ExperimentConfig,
                         mu: float = 0.0) -> np.ndarray:
    """K SGD steps on the local loss plus (mu/2)||x - x_g||^2."""
    x = x_g.copy()
    for _ in range(cfg.local_steps):
        X, y = next(client.batches)
        grad_x, _ = backward(spec, x, None, forward(spec, x, None, X), y)
        if mu:
            grad_x = grad_x + mu * (x - x_g)
        x = sgd_step(x, grad_x, cfg.lr_local)
    return x


def aggregate_masked(x_prev: np.ndarray, updates, lr_global: float) -> np.ndarray:
    """Masked server update over ``updates = [(x_i, m_i), ...]``.

    Each coordinate moves toward the mean of the clients that kept it;
    coordinates no client kept stay at ``x_prev``.
    """
    if not updates:
        raise ValueError("no client updates to aggregate")
    num = np.zeros_like(x_prev)
    cover = np.zeros_like(x_prev)
    for x_i, m_i in updates:
        if x_i.shape != x_prev.shape or m_i.shape != x_prev.shape:
            raise ValueError("update length does not match the global model")
        num += x_i * m_i
        cover += m_i
    seen = cover > 0
    mean = np.divide(num, cover, out=x_prev.copy(), where=seen)
    if lr_global == 1.0:
        return mean
    out = x_prev.copy()
    out[seen] = x_prev[seen] - lr_global * (x_prev[seen] - mean[seen])
    return out


def sample_participants(n_clients: int, rate: float, seed: int, t: int) -> list[int]:
    if not 0 < rate <= 1:
        raise ValueError("participation rate must be in (0, 1]")
    if rate == 1.0:
        return list(range(n_clients))
    count = max(1, math.ceil(rate * n_clients - 1e-9))
    picked = stream(seed, "participants", t).choice(n_clients, size=count, replace=False)
    return sorted(int(i) for i in picked)


def _local_work(fed: Federation, client: ClientState, t: int, warm: bool):
    cfg, spec, x_g = fed.config, fed.spec, fed.server.params
    if warm and cfg.algorithm == "fedpews":
        theta_excl = client_exclusion(fed.server, client)
        return local_round_pews(spec, client, x_g, theta_excl, cfg, t)
    if warm and cfg.algorithm == "fedpews_fixed":
        return (*local_round_fixed(spec, client, x_g, cfg), None, None)
    proximal = cfg.algorithm == "fedprox" or (fed.uses_masks and cfg.base_optimizer == "fedprox")
    x = local_round_standard(spec, client, x_g, cfg, cfg.prox_mu if proximal else 0.0)
    return x, np.ones(spec.d), None, None


def run_round(fed: Federation, t: int) -> RoundRecord:
    cfg, server = fed.config, fed.server
    if not 1 <= t <= cfg.rounds:
        raise ValueError(f"round {t} outside 1..{cfg.rounds}")
    start = time.perf_counter_ns()
    warm = fed.uses_masks and t <= cfg.warmup_rounds
    ids = [i for i in sample_participants(cfg.n_clients, cfg.participation_rate, cfg.seed, t)
           if fed.clients[i].batches is not None]
    clients = [fed.clients[i] for i in ids]

    if cfg.client_workers > 1 and len(clients) > 1:
        with ThreadPoolExecutor(max_workers=cfg.client_workers) as pool:
            results = list(pool.map(lambda c: _local_work(fed, c, t, warm), clients))
    else:
        results = [_local_work(fed, c, t, warm) for c in clients]

    uploads = {}
    for c, (x_i, _, theta, scores) in zip(clients, results):
        c.params = x_i
        if theta is not None:
            c.theta, c.scores = theta, scores
            uploads[c.id] = theta
    if results:
        server.params = aggregate_masked(server.params, [(x, m) for x, m, _, _ in results], cfg.lr_global)
    if warm and cfg.algorithm == "fedpews":
        update_global_theta(server, uploads)
    server.round = t

    if t == 1 or t % cfg.eval_every == 0 or t == cfg.rounds:
        fed._last_eval = evaluate(fed.spec, server.params, None, fed.test.features, fed.test.labels)
    acc, loss = fed._last_eval
    client_acc = _client_accuracy(fed) if cfg.client_eval else None
    elapsed_ms = (time.perf_counter_ns() - start) / 1e6
    all_ones = all(bool(np.all(m == 1.0)) for _, m, _, _ in results)
    record = RoundRecord(t, 100.0 * acc, loss, elapsed_ms, t <= cfg.warmup_rounds and fed.uses_masks,
                         client_acc, all_ones)
    fed.log.records.append(record)
    return record


def _client_accuracy(fed: Federation) -> dict[int, float]:
    """Global model accuracy on the test samples of each client's own classes."""
    out = {}
    for c in fed.clients:
        classes = np.unique(fed.train.labels[c.shard.indices])
        keep = np.isin(fed.test.labels, classes)
        if keep.any():
            acc, _ = evaluate(fed.spec, fed.server.params, None, fed.test.features[keep], fed.test.labels[keep])
            out[c.id] = 100.0 * acc
    return out


def run_experiment(cfg: ExperimentConfig, train: D.Dataset | None = None,
                   test: D.Dataset | None = None) -> RunLog:
    fed = init_experiment(cfg, train, test)
    for t in range(1, cfg.rounds + 1):
        run_round(fed, t)
    fed.log.digest = model_digest(fed.server.params)
    return fed.log


def run_federation(cfg: ExperimentConfig, train=None, test=None) -> Federation:
    """Like run_experiment but returns the whole final state."""
    fed = init_experiment(cfg, train, test)
    for t in range(1, cfg.rounds + 1):
        run_round(fed, t)
    fed.log.digest = model_digest(fed.server.params)
    return fed

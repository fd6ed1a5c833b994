"""Synthetic interleaved-cluster dataset, participant partitioning and mini-batching."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fedpews.rng import stream

N_CLASSES = 4
GRID = (-3.0, -1.0, 1.0, 3.0)
DEFAULT_CLUSTER_STD = 0.25
DEFAULT_TEST_SIZE = 4000

MAGIC = b"PEWS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQHH")


@dataclass
class Dataset:
    features: np.ndarray      # (n, 5) float64
    labels: np.ndarray        # (n,) int64
    class_count: int = N_CLASSES

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be (n, dim) with one label per row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.class_count)


@dataclass
class Shard:
    owner: int
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)


def feature_lift(x, y) -> np.ndarray:
    """[x, y, x^2, y^2, xy]; works elementwise on arrays (last axis is the feature axis)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.stack([x, y, x * x, y * y, x * y], axis=-1)


def cluster_centers() -> tuple[np.ndarray, np.ndarray]:
    """Centers on the 4x4 grid and their classes, (row + col) mod 4.

    Diagonal stripes: every 4-neighbour of a cluster belongs to another class.
    """
    centers, classes = [], []
    for r, cy in enumerate(GRID):
        for c, cx in enumerate(GRID):
            centers.append((cx, cy))
            classes.append((r + c) % N_CLASSES)
    return np.array(centers), np.array(classes, dtype=np.int64)


def gen_synthetic(n_total: int, seed: int, cluster_std: float = DEFAULT_CLUSTER_STD) -> Dataset:
    centers, classes = cluster_centers()
    if n_total <= 0 or n_total % len(centers):
        raise ValueError(f"n_total must be a positive multiple of {len(centers)}, got {n_total}")
    if cluster_std <= 0:
        raise ValueError("cluster_std must be positive")
    rng = stream(seed, "synthetic")
    per = n_total // len(centers)
    pts = np.repeat(centers, per, axis=0) + rng.normal(0.0, cluster_std, size=(n_total, 2))
    labels = np.repeat(classes, per)
    order = rng.permutation(n_total)
    pts, labels = pts[order], labels[order]
    return Dataset(feature_lift(pts[:, 0], pts[:, 1]), labels)


def split_by_class(dataset: Dataset, assignment: dict[int, int]) -> list[Shard]:
    """One shard per participant holding every sample whose class maps to it."""
    missing = set(range(dataset.class_count)) - set(assignment)
    if missing:
        raise ValueError(f"classes {sorted(missing)} are not assigned to any participant")
    n_parts = max(assignment.values()) + 1
    owner = np.array([assignment[c] for c in range(dataset.class_count)])[dataset.labels]
    return [Shard(i, np.flatnonzero(owner == i)) for i in range(n_parts)]


def even_odd_assignment(class_count: int = N_CLASSES) -> dict[int, int]:
    return {c: c % 2 for c in range(class_count)}


def per_class_assignment(class_count: int = N_CLASSES) -> dict[int, int]:
    return {c: c for c in range(class_count)}


def quota_counts(proportions: np.ndarray, n: int) -> np.ndarray:
    """Floor of ``proportions * n`` plus remainders by largest fractional part (ties to lower index)."""
    quotas = np.asarray(proportions, dtype=np.float64) * n
    counts = np.floor(quotas).astype(np.int64)
    left = int(n - counts.sum())
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:left]] += 1
    return counts


def dirichlet_partition(dataset: Dataset, n_parts: int, alpha: float, seed: int) -> list[Shard]:
    if n_parts < 1:
        raise ValueError("need at least one participant")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = stream(seed, "dirichlet")
    parts = [[] for _ in range(n_parts)]
    for c in range(dataset.class_count):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        p = rng.dirichlet(np.full(n_parts, float(alpha)))
        bounds = np.concatenate([[0], np.cumsum(quota_counts(p, len(idx)))])
        for i in range(n_parts):
            parts[i].append(idx[bounds[i]:bounds[i + 1]])
    return [Shard(i, np.sort(np.concatenate(p))) for i, p in enumerate(parts)]


class BatchIterator:
    """Endless mini-batches over a shard; one fresh permutation per epoch.

    The permutation for epoch ``e`` comes from stream (seed, "batch", owner, e),
    so two iterators with the same seed and owner yield identical sequences.
    The last partial batch of each epoch is kept.
    """

    def __init__(self, shard: Shard, dataset: Dataset, batch_size: int, seed: int):
        if len(shard) == 0:
            raise ValueError(f"participant {shard.owner} has an empty shard")
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.shard = shard
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = -1
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def __iter__(self):
        return self

    def __next__(self) -> tuple[np.ndarray, np.ndarray]:
        if self._pos >= len(self._order):
            self.epoch += 1
            rng = stream(self.seed, "batch", self.shard.owner, self.epoch)
            self._order = self.shard.indices[rng.permutation(len(self.shard))]
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += len(idx)
        return self.dataset.features[idx], self.dataset.labels[idx]


def batches(shard: Shard, dataset: Dataset, batch_size: int, seed: int) -> BatchIterator:
    return BatchIterator(shard, dataset, batch_size, seed)


def save_dataset(dataset: Dataset, path) -> None:
    n, dim = dataset.features.shape
    rec = np.dtype([("x", "<f8", (dim,)), ("y", "<u2")])
    arr = np.empty(n, dtype=rec)
    arr["x"] = dataset.features
    arr["y"] = dataset.labels
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, n, dim, dataset.class_count))
        f.write(arr.tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, dim, n_classes = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    rec = np.dtype([("x", "<f8", (dim,)), ("y", "<u2")])
    body = raw[_HEADER.size:]
    if len(body) != n * rec.itemsize:
        raise ValueError(f"{path}: expected {n} records, body has {len(body)} bytes")
    arr = np.frombuffer(body, dtype=rec)
    return Dataset(arr["x"].astype(np.float64), arr["y"].astype(np.int64), n_classes)

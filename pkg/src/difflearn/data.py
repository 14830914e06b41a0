"""Datasets: IDX ingestion, synthetic pools, per-agent shards, mini-batches.

A pool (the full training set) is partitioned into per-agent shards. IID
agents draw uniformly from the whole pool; non-IID agents first draw a
restricted class set and then sample only within it. Each agent owns a
seeded batch sampler over its shard.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    CountMismatchError,
    EmptyShardError,
    InsufficientSamplesError,
    MissingDataError,
    TruncatedFileError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

# Per-dimension noise of the synthetic class blobs; means sit one unit apart.
SYNTHETIC_STD = 0.2

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix (n, F) in float64 plus integer labels in 0..C-1."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in 0..{self.num_classes - 1}")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes)


def concat_datasets(datasets: Sequence[LabeledDataset]) -> LabeledDataset:
    """Concatenate shards (multiset union); class counts must agree."""
    if not datasets:
        raise ValueError("cannot concatenate zero datasets")
    num_classes = datasets[0].num_classes
    if any(d.num_classes != num_classes for d in datasets):
        raise ValueError("datasets disagree on num_classes")
    return LabeledDataset(
        np.concatenate([d.features for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        num_classes,
    )


# -- IDX loading ---------------------------------------------------------------


def _read_exact(fh, count: int, path) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise TruncatedFileError(f"{path}: expected {count} more bytes, got {len(buf)}")
    return buf


def _open_idx(path):
    # The published MNIST archives are gzipped; accept both raw and .gz.
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Load an IDX image/label file pair (big-endian headers, uint8 payload).

    Pixels are scaled to [0, 1] and images flattened to rows*cols features.
    """
    with _open_idx(images_path) as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path))
        if magic != IDX_IMAGE_MAGIC:
            raise BadMagicError(
                f"{images_path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        pixels = np.frombuffer(_read_exact(fh, count * rows * cols, images_path), dtype=np.uint8)
    with _open_idx(labels_path) as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, labels_path))
        if magic != IDX_LABEL_MAGIC:
            raise BadMagicError(
                f"{labels_path}: magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}"
            )
        labels = np.frombuffer(_read_exact(fh, label_count, labels_path), dtype=np.uint8)
    if count != label_count:
        raise CountMismatchError(f"{count} images but {label_count} labels")
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    num_classes = int(labels.max()) + 1 if count else 0
    return LabeledDataset(features, labels, num_classes)


def mnist_paths(data_dir, split: str) -> tuple[Path, Path]:
    """Locate the IDX pair for a split, accepting plain or .gz files."""
    base = Path(data_dir)
    resolved = []
    for name in MNIST_FILES[split]:
        for candidate in (base / name, base / (name + ".gz")):
            if candidate.exists():
                resolved.append(candidate)
                break
        else:
            raise MissingDataError(
                f"{base / name}[.gz] not found; download the MNIST IDX files into "
                f"{base} manually (no automatic downloads) or point --data elsewhere"
            )
    return resolved[0], resolved[1]


def load_mnist(data_dir, split: str) -> LabeledDataset:
    images, labels = mnist_paths(data_dir, split)
    return load_idx(images, labels)


# -- synthetic data --------------------------------------------------------------


def make_synthetic(num_samples: int, num_classes: int, feature_dim: int, seed: int) -> LabeledDataset:
    """Class-conditional Gaussian blobs with unit-separation means.

    Class c is centered on axis c % F at magnitude 1 + c // F, so nearest
    means are exactly one unit apart once classes outnumber dimensions.
    Labels are balanced (first `num_samples % C` classes get the remainder).
    """
    if num_samples < 1 or num_classes < 1 or feature_dim < 1:
        raise ValueError("num_samples, num_classes and feature_dim must all be positive")
    rng = np.random.default_rng(seed)
    per_class = num_samples // num_classes
    counts = np.full(num_classes, per_class, dtype=np.int64)
    counts[: num_samples % num_classes] += 1
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), counts)
    labels = labels[rng.permutation(num_samples)]
    means = np.zeros((num_classes, feature_dim))
    for c in range(num_classes):
        means[c, c % feature_dim] = 1.0 + c // feature_dim
    features = means[labels] + rng.normal(0.0, SYNTHETIC_STD, (num_samples, feature_dim))
    return LabeledDataset(features, labels, num_classes)


# -- partitioning ------------------------------------------------------------------


@dataclass(frozen=True)
class ShardedDataset:
    """Per-agent shards plus the class set each agent is allowed to observe."""

    shards: tuple[LabeledDataset, ...]
    agent_class_sets: tuple[frozenset[int], ...]

    def __post_init__(self):
        if len(self.shards) != len(self.agent_class_sets):
            raise ValueError("one class set per shard required")

    @property
    def num_agents(self) -> int:
        return len(self.shards)

    def shard_sizes(self) -> dict[int, int]:
        return {k: len(shard) for k, shard in enumerate(self.shards)}


def partition(
    pool: LabeledDataset,
    num_agents: int,
    shard_size: int | Sequence[int],
    noniid_agents,
    classes_per_noniid: int | Mapping[int, int],
    seed,
    disjoint: bool = False,
) -> ShardedDataset:
    """Split a pool into per-agent shards.

    IID agents sample uniformly from the whole pool without replacement
    within their own shard; shards of different agents may overlap unless
    `disjoint` is set. Each non-IID agent first draws its class set
    (uniformly, without replacement) and then samples only within it.
    `classes_per_noniid` is a single count or a per-agent mapping.
    """
    if num_agents < 1:
        raise ValueError(f"num_agents must be >= 1, got {num_agents}")
    if isinstance(shard_size, (int, np.integer)):
        sizes = [int(shard_size)] * num_agents
    else:
        sizes = [int(s) for s in shard_size]
        if len(sizes) != num_agents:
            raise ValueError(f"{len(sizes)} shard sizes for {num_agents} agents")
    if any(s < 1 for s in sizes):
        raise ValueError("shard sizes must be positive")
    noniid = {int(a) for a in noniid_agents}
    for a in noniid:
        if not 0 <= a < num_agents:
            raise ValueError(f"non-IID agent id {a} out of range")

    def class_count(agent: int) -> int:
        if isinstance(classes_per_noniid, Mapping):
            c = int(classes_per_noniid[agent])
        else:
            c = int(classes_per_noniid)
        if not 1 <= c <= pool.num_classes:
            raise ValueError(f"classes per non-IID agent must lie in 1..{pool.num_classes}, got {c}")
        return c

    rng = np.random.default_rng(seed)
    all_classes = frozenset(range(pool.num_classes))
    available = np.ones(len(pool), dtype=bool)

    shards: list[LabeledDataset] = []
    class_sets: list[frozenset[int]] = []
    for agent in range(num_agents):
        if agent in noniid:
            chosen = rng.choice(pool.num_classes, size=class_count(agent), replace=False)
            class_set = frozenset(int(c) for c in chosen)
            candidate_mask = np.isin(pool.labels, sorted(class_set))
        else:
            class_set = all_classes
            candidate_mask = np.ones(len(pool), dtype=bool)
        if disjoint:
            candidate_mask &= available
        candidates = np.flatnonzero(candidate_mask)
        if len(candidates) < sizes[agent]:
            raise InsufficientSamplesError(
                f"agent {agent}: needs {sizes[agent]} samples, only {len(candidates)} "
                f"available for classes {sorted(class_set)}"
            )
        picked = rng.choice(candidates, size=sizes[agent], replace=False)
        if disjoint:
            available[picked] = False
        shards.append(pool.subset(np.sort(picked)))
        class_sets.append(class_set)
    return ShardedDataset(tuple(shards), tuple(class_sets))


# -- batching ---------------------------------------------------------------------


class BatchSampler:
    """Seeded mini-batch stream over one shard.

    Each local epoch visits every shard element exactly once: a fresh
    permutation is drawn (from the sampler's own stream) whenever the
    previous one is exhausted, then consumed in consecutive blocks of
    `batch_size`. The final block of an epoch may be shorter.
    """

    def __init__(self, shard: LabeledDataset, batch_size: int, seed):
        if len(shard) == 0:
            raise EmptyShardError("cannot sample from an empty shard")
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.shard = shard
        self.batch_size = batch_size
        self._rng = np.random.default_rng(seed)
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    @property
    def batches_per_epoch(self) -> int:
        return -(-len(self.shard) // self.batch_size)

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        """Return the next (features, labels) block of the current permutation."""
        if self._pos >= len(self._order):
            self._order = self._rng.permutation(len(self.shard))
            self._pos = 0
        block = self._order[self._pos : self._pos + self.batch_size]
        self._pos += len(block)
        return self.shard.features[block], self.shard.labels[block]

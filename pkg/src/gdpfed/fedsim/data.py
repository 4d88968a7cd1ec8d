"""Dataset shards, synthetic benchmarks, partitioners, and file loaders.

The desk-scale benchmark is a 10-class Gaussian-blob problem sized so a full
training run finishes in seconds.  Real data can be brought in from CSV
(header row f0..fk,label) or IDX image/label pairs.
"""

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .rng import DATA, stream

__all__ = [
    "DatasetShard",
    "synthetic_blobs",
    "split_even",
    "dirichlet_partition",
    "load_csv",
    "load_idx",
]


@dataclass(frozen=True)
class DatasetShard:
    features: np.ndarray  # (n_examples, n_features)
    labels: np.ndarray    # (n_examples,), ints in [0, num_classes)

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must have one entry per feature row")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be nonnegative")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx: np.ndarray) -> "DatasetShard":
        return DatasetShard(self.features[idx], self.labels[idx])


def synthetic_blobs(n_examples: int, n_classes: int = 10, n_features: int = 32,
                    seed: int = 0, class_sep: float = 3.0) -> DatasetShard:
    """Isotropic Gaussian blobs with class means on a random sphere."""
    if n_examples < n_classes:
        raise ValueError("need at least one example per class")
    rng = stream(seed, DATA)
    means = rng.standard_normal((n_classes, n_features))
    means *= class_sep / np.linalg.norm(means, axis=1, keepdims=True)
    labels = rng.integers(0, n_classes, size=n_examples)
    # Guarantee every class appears so accuracy baselines are well defined.
    labels[:n_classes] = np.arange(n_classes)
    features = means[labels] + rng.standard_normal((n_examples, n_features))
    return DatasetShard(features, labels)


def split_even(shard: DatasetShard, n_parts: int, seed: int = 0) -> "list[DatasetShard]":
    """IID split into n_parts shards of near-equal size."""
    n = len(shard)
    if n_parts > n:
        raise ValueError(f"cannot split {n} examples into {n_parts} nonempty parts")
    perm = stream(seed, DATA, round_index=1).permutation(n)
    return [shard.subset(np.sort(part)) for part in np.array_split(perm, n_parts)]


def dirichlet_partition(shard: DatasetShard, n_clients: int, alpha: float,
                        seed: int = 0) -> "list[DatasetShard]":
    """Partition with per-client class proportions drawn from Dirichlet(alpha).

    Every example is assigned exactly once and every client receives at least
    one example.  When a requested class pool is exhausted the draw falls back
    to the largest remaining pool, so small alpha still yields a partition.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    n = len(shard)
    if n_clients > n:
        raise ValueError(f"cannot partition {n} examples across {n_clients} clients")
    classes = np.unique(shard.labels)
    pools = {
        int(c): list(stream(seed, DATA, round_index=2, group=int(c)).permutation(
            np.flatnonzero(shard.labels == c)))
        for c in classes
    }
    base, extra = divmod(n, n_clients)
    assignments: "list[list[int]]" = []
    for i in range(n_clients):
        size = base + (1 if i < extra else 0)
        rng = stream(seed, DATA, round_index=3, client=i)
        proportions = rng.dirichlet(np.full(classes.size, alpha))
        wanted = rng.choice(classes, size=size, p=proportions)
        taken = []
        for c in wanted:
            c = int(c)
            if not pools[c]:
                c = max(pools, key=lambda k: (len(pools[k]), -k))
            taken.append(pools[c].pop())
        assignments.append(taken)
    return [shard.subset(np.sort(np.asarray(idx, dtype=int))) for idx in assignments]


def load_csv(path) -> DatasetShard:
    """Read a shard from CSV with header f0..fk,label."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        expected = [f"f{i}" for i in range(len(header) - 1)] + ["label"]
        if [h.strip() for h in header] != expected:
            raise ValueError(f"{path}: header must be f0..f{len(header) - 2},label")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.asarray(rows)
    labels = data[:, -1]
    if not np.allclose(labels, np.round(labels)):
        raise ValueError(f"{path}: labels must be integers")
    return DatasetShard(data[:, :-1], labels.astype(int))


_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def load_idx(images_path, labels_path) -> DatasetShard:
    """Read an IDX image/label pair, flattening pixels to [0, 1] features."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", fh.read(16))
        if magic != _IDX_IMAGES_MAGIC:
            raise ValueError(f"{images_path}: bad magic {magic:#010x}")
        raw = np.frombuffer(fh.read(count * rows * cols), dtype=np.uint8)
        if raw.size != count * rows * cols:
            raise ValueError(f"{images_path}: truncated image data")
    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(">II", fh.read(8))
        if magic != _IDX_LABELS_MAGIC:
            raise ValueError(f"{labels_path}: bad magic {magic:#010x}")
        labels = np.frombuffer(fh.read(label_count), dtype=np.uint8)
        if labels.size != label_count:
            raise ValueError(f"{labels_path}: truncated label data")
    if count != label_count:
        raise ValueError(f"image count {count} != label count {label_count}")
    features = raw.reshape(count, rows * cols).astype(float) / 255.0
    return DatasetShard(features, labels.astype(int))

"""Datasets, per-node shards and the MNIST IDX reader."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..rng import DATA

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.n_classes)


def make_synthetic_dataset(
    n_examples: int, n_features: int, n_classes: int, separation: float, seed: int
) -> Dataset:
    """Unit-covariance Gaussian clusters whose means are pairwise ``separation`` apart.

    Means sit at ``separation / sqrt(2)`` along orthonormal random
    directions. Labels are balanced and shuffled.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if n_classes > n_features:
        raise ValueError("orthogonal class means need n_classes <= n_features")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n_features, n_classes)))
    means = (separation / math.sqrt(2.0)) * q.T
    labels = rng.permutation(np.arange(n_examples) % n_classes)
    inputs = means[labels] + rng.standard_normal((n_examples, n_features))
    return Dataset(inputs, labels.astype(np.int64), n_classes)


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _read_idx(path: Path, magic: int, n_dims: int) -> tuple[tuple[int, ...], bytes]:
    raw = _read_bytes(path)
    header_len = 4 + 4 * n_dims
    if len(raw) < header_len:
        raise IdxFormatError(f"{path}: truncated header, expected {header_len} bytes, got {len(raw)}")
    (got_magic,) = struct.unpack(">I", raw[:4])
    if got_magic != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{got_magic:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{n_dims}I", raw[4:header_len])
    expected = header_len + int(np.prod(dims, dtype=np.int64))
    if len(raw) != expected:
        raise IdxFormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    return dims, raw[header_len:]


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    (n_img, rows, cols), pix = _read_idx(Path(images_path), IDX_IMAGES_MAGIC, 3)
    (n_lab,), lab = _read_idx(Path(labels_path), IDX_LABELS_MAGIC, 1)
    if n_img != n_lab:
        raise IdxFormatError(f"{n_img} images but {n_lab} labels")
    inputs = np.frombuffer(pix, dtype=np.uint8).reshape(n_img, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    return Dataset(inputs, labels, 10)


def write_idx(path, array: np.ndarray, magic: int) -> None:
    """Write a uint8 array in IDX layout (used for fixtures and tests)."""
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


@dataclass(frozen=True)
class NodeShard:
    """Round-robin shard: node i owns indices i, i+N, i+2N, ...

    Batches walk a per-epoch permutation that depends only on
    ``(seed, node_id, epoch)``.
    """

    node_id: int
    indices: np.ndarray
    seed: int
    batch_size: int

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.indices) / self.batch_size)

    def permutation(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.node_id, DATA, epoch]))
        return self.indices[rng.permutation(len(self.indices))]

    def batch(self, t: int) -> np.ndarray:
        """Dataset indices of the batch used at round ``t``."""
        epoch, pos = divmod(t, self.batches_per_epoch)
        perm = self.permutation(epoch)
        return perm[pos * self.batch_size : (pos + 1) * self.batch_size]


def make_shards(n_examples: int, n_nodes: int, seed: int, batch_size: int) -> list[NodeShard]:
    if n_examples < n_nodes:
        raise ValueError(f"{n_examples} examples cannot cover {n_nodes} nodes")
    idx = np.arange(n_examples)
    return [NodeShard(i, idx[i::n_nodes], seed, batch_size) for i in range(n_nodes)]

"""Split of a model's parameter blocks into shared and local vectors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["Block", "PartitionedModel", "partition_model"]

SHARED, LOCAL = "shared", "local"


@dataclass(frozen=True)
class Block:
    name: str
    shape: tuple[int, ...]
    tag: str

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass(frozen=True)
class PartitionedModel:
    blocks: tuple[Block, ...]

    def __post_init__(self):
        if self.shared_dim < 1:
            raise ValueError("at least one parameter block must be shared")

    @property
    def shared_dim(self) -> int:
        return sum(b.size for b in self.blocks if b.tag == SHARED)

    @property
    def local_dim(self) -> int:
        return sum(b.size for b in self.blocks if b.tag == LOCAL)

    @property
    def total_dim(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def n_shared_blocks(self) -> int:
        return sum(b.tag == SHARED for b in self.blocks)

    def unpack(self, shared: np.ndarray, local: np.ndarray) -> list[np.ndarray]:
        """Full ordered parameter list from the two flat vectors."""
        shared = np.asarray(shared)
        local = np.asarray(local)
        if shared.shape != (self.shared_dim,) or local.shape != (self.local_dim,):
            raise ValueError(
                f"expected shared ({self.shared_dim},) and local ({self.local_dim},), "
                f"got {shared.shape} and {local.shape}"
            )
        params = []
        offsets = {SHARED: 0, LOCAL: 0}
        for b in self.blocks:
            src = shared if b.tag == SHARED else local
            start = offsets[b.tag]
            params.append(src[start : start + b.size].reshape(b.shape))
            offsets[b.tag] = start + b.size
        return params

    def pack(self, params: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        """Inverse of :meth:`unpack`."""
        if len(params) != len(self.blocks):
            raise ValueError(f"expected {len(self.blocks)} parameter blocks, got {len(params)}")
        shared, local = [], []
        for b, p in zip(self.blocks, params):
            p = np.asarray(p, dtype=np.float64)
            if p.shape != b.shape:
                raise ValueError(f"block {b.name}: expected shape {b.shape}, got {p.shape}")
            (shared if b.tag == SHARED else local).append(p.ravel())
        cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)  # noqa: E731
        return cat(shared), cat(local)


def partition_model(
    block_shapes: Sequence[tuple[str, tuple[int, ...]]],
    scheme: str,
    k: int | None = None,
    tags: Sequence[str] | None = None,
) -> PartitionedModel:
    """Tag blocks as shared or local.

    ``share_first_k`` shares the first ``k`` blocks, ``share_all`` shares
    everything (no local parameters), ``custom`` takes one tag per block.
    """
    n = len(block_shapes)
    if scheme == "share_first_k":
        if k is None or not 1 <= k <= n:
            raise ValueError(f"share_first_k needs 1 <= k <= {n}, got {k}")
        chosen = [SHARED if i < k else LOCAL for i in range(n)]
    elif scheme == "share_all":
        chosen = [SHARED] * n
    elif scheme == "custom":
        if tags is None or len(tags) != n:
            raise ValueError(f"custom partition needs {n} tags, got {tags}")
        bad = set(tags) - {SHARED, LOCAL}
        if bad:
            raise ValueError(f"unknown partition tags {sorted(bad)}")
        chosen = list(tags)
    else:
        raise ValueError(f"unknown partition scheme {scheme!r}")
    blocks = tuple(Block(name, tuple(int(x) for x in shape), tag) for (name, shape), tag in zip(block_shapes, chosen))
    return PartitionedModel(blocks)

"""Trainable objectives and data for the optimizer."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..protocol import NodeState, network_mean
from .data import (
    Dataset,
    IdxFormatError,
    NodeShard,
    load_mnist_idx,
    make_shards,
    make_synthetic_dataset,
    write_idx,
)
from .mlp import DivergenceError, MlpSpec, MlpTask, softmax

__all__ = [
    "Dataset",
    "DivergenceError",
    "IdxFormatError",
    "MlpSpec",
    "MlpTask",
    "NodeShard",
    "evaluate_network",
    "load_mnist_idx",
    "make_shards",
    "make_synthetic_dataset",
    "softmax",
    "write_idx",
]


def evaluate_network(states: Sequence[NodeState], task: MlpTask, test_set: Dataset) -> tuple[list[float], float]:
    """Test every node with the network-average shared vector and its own local part.

    Returns per-node accuracies and their mean.
    """
    if len(test_set) == 0:
        raise ValueError("empty test set")
    s_bar = network_mean(states)
    per_node = [task.accuracy(s_bar, st.local, test_set.inputs, test_set.labels) for st in states]
    return per_node, float(np.mean(per_node))

"""Per-node random streams derived from ``(master_seed, node_id)``.

Noise, data sampling and parameter initialization draw from separate
streams so that toggling one (e.g. disabling noise) never shifts the
others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NOISE, DATA, INIT = 0, 1, 2


def stream(master_seed: int, node_id: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(node_id), purpose]))


@dataclass
class NodeStreams:
    noise: np.random.Generator
    data: np.random.Generator
    init: np.random.Generator


def node_streams(master_seed: int, n_nodes: int) -> list[NodeStreams]:
    return [
        NodeStreams(
            noise=stream(master_seed, i, NOISE),
            data=stream(master_seed, i, DATA),
            init=stream(master_seed, i, INIT),
        )
        for i in range(n_nodes)
    ]

"""Bias-free tanh MLP with softmax cross-entropy, hand-written backprop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..partition import PartitionedModel, partition_model


class DivergenceError(FloatingPointError):
    """Loss or gradient became non-finite."""


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for (_, out), (nxt_in, _) in zip(self.layer_dims, self.layer_dims[1:]):
            if out != nxt_in:
                raise ValueError(f"layer dims do not chain: {self.layer_dims}")

    @classmethod
    def three_layer(cls, n_features: int, hidden: int, n_classes: int) -> "MlpSpec":
        """(F x H) -> tanh -> (H x F) -> tanh -> (F x C); 784/10/10 gives 7840 weights per layer."""
        return cls(((n_features, hidden), (hidden, n_features), (n_features, n_classes)))

    @property
    def block_shapes(self) -> list[tuple[str, tuple[int, int]]]:
        return [(f"layer{i}", dims) for i, dims in enumerate(self.layer_dims)]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1][1]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class MlpTask:
    """Objective over a partitioned MLP.

    Parameters travel as the (shared, local) vector pair of the partition;
    gradients come back in the same layout.
    """

    def __init__(self, spec: MlpSpec, partition: PartitionedModel):
        shapes = [b.shape for b in partition.blocks]
        if shapes != [dims for dims in spec.layer_dims]:
            raise ValueError("partition blocks do not match the MLP layers")
        self.spec = spec
        self.partition = partition

    @classmethod
    def build(cls, spec: MlpSpec, scheme: str, k: int | None = None, tags=None) -> "MlpTask":
        return cls(spec, partition_model(spec.block_shapes, scheme, k=k, tags=tags))

    def init_params(self, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        weights = []
        for fan_in, fan_out in self.spec.layer_dims:
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        return self.partition.pack(weights)

    def _forward(self, weights, x):
        acts = [x]
        h = x
        for k, w in enumerate(weights):
            z = h @ w
            h = np.tanh(z) if k < len(weights) - 1 else z
            acts.append(h)
        return acts

    def logits(self, shared, local, x) -> np.ndarray:
        return self._forward(self.partition.unpack(shared, local), x)[-1]

    def loss_and_grads(self, shared, local, x, y) -> tuple[float, np.ndarray, np.ndarray]:
        """Mean cross-entropy over the batch and its partials w.r.t. shared and local."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y)
        if len(x) == 0:
            raise ValueError("empty batch")
        weights = self.partition.unpack(shared, local)
        acts = self._forward(weights, x)
        logp = _log_softmax(acts[-1])
        rows = np.arange(len(y))
        loss = float(-logp[rows, y].mean())
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss}")

        delta = np.exp(logp)
        delta[rows, y] -= 1.0
        delta /= len(y)
        grads = [None] * len(weights)
        for k in range(len(weights) - 1, -1, -1):
            grads[k] = acts[k].T @ delta
            if k > 0:
                delta = (delta @ weights[k].T) * (1.0 - acts[k] ** 2)
        g_s, g_l = self.partition.pack(grads)
        if not (np.all(np.isfinite(g_s)) and np.all(np.isfinite(g_l))):
            raise DivergenceError("non-finite gradient")
        return loss, g_s, g_l

    def accuracy(self, shared, local, x, y) -> float:
        pred = self.logits(shared, local, x).argmax(axis=1)
        return float((pred == np.asarray(y)).mean())

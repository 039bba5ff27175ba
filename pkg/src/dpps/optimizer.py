"""Partial-communication push-sum SGD on top of the private push-sum round.

Each node keeps a local block that is trained with plain SGD and never
leaves the node, and a shared block whose L1-clipped gradient step is fed
to :func:`dpps.protocol.dpps_round` as the perturbation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .partition import PartitionedModel, partition_model
from .privacy import PrivacyBudget
from .protocol import NodeState, RoundOutcome, dpps_round, network_mean, synchronize
from .tasks.data import Dataset, NodeShard
from .tasks.mlp import MlpTask
from .topology import WeightMatrix

__all__ = [
    "DpSettings",
    "OptimizerConfig",
    "PartitionedModel",
    "RoundMetrics",
    "clip_gradient_l1",
    "delta_metrics",
    "local_step",
    "partition_model",
    "partpsp_round",
]


@dataclass(frozen=True)
class OptimizerConfig:
    gamma_l: float
    gamma_s: float
    clip_threshold: float
    rounds: int
    sync_interval: int = 0
    metrics_interval: int = 10

    def __post_init__(self):
        for name in ("gamma_l", "clip_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        # gamma_s = 0 freezes the shared block (pure consensus)
        if not self.gamma_s >= 0:
            raise ValueError("gamma_s must be >= 0")
        if self.rounds < 1:
            raise ValueError("rounds must be positive")
        if self.sync_interval < 0:
            raise ValueError("sync_interval must be >= 0")
        if self.metrics_interval < 1:
            raise ValueError("metrics_interval must be positive")


@dataclass(frozen=True)
class DpSettings:
    """Everything the private push-sum round needs besides the states."""

    budget: PrivacyBudget
    enabled: bool
    c_prime: float
    lam: float
    sensitivity_mode: str = "estimated"
    sync_reset_mode: str = "zeroed"


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    esti_sensitivity: float
    real_sensitivity: float
    mean_eps_l1: float
    mean_noise_l1: float
    loss_mean: float
    delta_l: float
    delta_sbar: float
    ras_running: float
    epsilon_per_round: float
    synced: bool


def clip_gradient_l1(g: np.ndarray, clip_threshold: float) -> np.ndarray:
    """Scale ``g`` down to L1 norm ``clip_threshold`` if it is longer; otherwise return it as is."""
    norm = float(np.abs(g).sum())
    if norm <= clip_threshold:
        return g
    return g * (clip_threshold / norm)


def local_step(local: np.ndarray, g_l: np.ndarray, gamma_l: float) -> np.ndarray:
    if np.shape(local) != np.shape(g_l):
        raise ValueError(f"local {np.shape(local)} and gradient {np.shape(g_l)} differ")
    return local - gamma_l * g_l


def delta_metrics(
    pre: Sequence[NodeState], post_local: Sequence[np.ndarray], task: MlpTask, batch: Dataset
) -> tuple[float, float]:
    """Squared gradient norms of the local and averaged shared parameters.

    ``delta_l`` averages ||grad_l F_i(y_i, l_i)||^2 over nodes at the
    round-start point; ``delta_sbar`` is ||mean_i grad_s F_i(s_bar, l_i')||^2
    with the round-start average and the post-step local blocks.
    """
    x, y = batch.inputs, batch.labels
    sq = []
    for st in pre:
        _, _, g_l = task.loss_and_grads(st.corrected, st.local, x, y)
        sq.append(float(g_l @ g_l))
    s_bar = network_mean(pre)
    g_s = np.mean([task.loss_and_grads(s_bar, l, x, y)[1] for l in post_local], axis=0)
    return float(np.mean(sq)), float(g_s @ g_s)


def partpsp_round(
    states: Sequence[NodeState],
    task: MlpTask,
    data: Dataset,
    shards: Sequence[NodeShard],
    w: WeightMatrix,
    cfg: OptimizerConfig,
    dp: DpSettings,
    rng_streams: Sequence[np.random.Generator],
    t: int,
    eval_batch: Dataset | None = None,
) -> tuple[RoundOutcome, RoundMetrics]:
    """One PartPSP iteration for all nodes, followed by an optional sync."""
    n = len(states)
    perturbations = np.empty((n, task.partition.shared_dim))
    new_locals, losses = [], []
    for i, st in enumerate(states):
        idx = shards[i].batch(t)
        x, y = data.inputs[idx], data.labels[idx]
        loss, g_s, g_l = task.loss_and_grads(st.corrected, st.local, x, y)
        new_local = local_step(st.local, g_l, cfg.gamma_l)
        if new_local.size:
            # shared gradient is taken after the local update
            _, g_s, _ = task.loss_and_grads(st.corrected, new_local, x, y)
        perturbations[i] = -cfg.gamma_s * clip_gradient_l1(g_s, cfg.clip_threshold)
        new_locals.append(new_local)
        losses.append(loss)

    delta_l = delta_sbar = math.nan
    if eval_batch is not None and t % cfg.metrics_interval == 0:
        delta_l, delta_sbar = delta_metrics(states, new_locals, task, eval_batch)

    stepped = [replace(st, local=l) for st, l in zip(states, new_locals)]
    outcome = dpps_round(
        stepped,
        w,
        perturbations,
        dp.budget,
        dp.enabled,
        rng_streams,
        c_prime=dp.c_prime,
        lam=dp.lam,
        sensitivity_mode=dp.sensitivity_mode,
    )
    synced = cfg.sync_interval > 0 and (t + 1) % cfg.sync_interval == 0
    if synced:
        outcome = replace(outcome, states=synchronize(outcome.states, dp.sync_reset_mode))
    metrics = RoundMetrics(
        round=t,
        esti_sensitivity=outcome.esti_sensitivity,
        real_sensitivity=outcome.real_sensitivity,
        mean_eps_l1=outcome.mean_eps_l1,
        mean_noise_l1=outcome.mean_noise_l1,
        loss_mean=float(np.mean(losses)),
        delta_l=delta_l,
        delta_sbar=delta_sbar,
        ras_running=math.nan,
        epsilon_per_round=dp.budget.epsilon_per_round if dp.enabled else math.inf,
        synced=synced,
    )
    return outcome, metrics

"""Differentially private perturbed push-sum (DPPS) and partial-communication SGD (PartPSP)."""

from .optimizer import clip_gradient_l1, local_step, partpsp_round
from .partition import PartitionedModel, partition_model
from .privacy import (
    init_estimate,
    network_sensitivity,
    privacy_budget,
    real_sensitivity,
    sample_laplace,
    update_estimate,
)
from .protocol import NodeState, dpps_round, initial_states, network_mean, synchronize
from .topology import (
    build_custom_schedule,
    build_d_out_schedule,
    build_exp_schedule,
    verify_connectivity,
    weight_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "NodeState",
    "PartitionedModel",
    "build_custom_schedule",
    "build_d_out_schedule",
    "build_exp_schedule",
    "clip_gradient_l1",
    "dpps_round",
    "init_estimate",
    "initial_states",
    "local_step",
    "network_mean",
    "network_sensitivity",
    "partition_model",
    "partpsp_round",
    "privacy_budget",
    "real_sensitivity",
    "sample_laplace",
    "synchronize",
    "update_estimate",
    "verify_connectivity",
    "weight_matrix",
]

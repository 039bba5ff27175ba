"""One synchronous round of differentially private perturbed push-sum.

Phases run for all nodes before the next phase starts:

1. perturb:   s_i <- s_i + eps_i
2. estimate:  update S_i, S = max_i S_i
3. noise:     s_i,noise = s_i + gamma_n * n_i,  n_i ~ Lap(0, S/b)^d
4. aggregate: s_i' = sum_j w_ij s_j,noise,  a_i' = sum_j w_ij a_j
5. correct:   y_i' = s_i' / a_i'

The simulator keeps node states as a list but does the arithmetic on
stacked ``(N, d)`` arrays, which is observationally the same as running
each node separately with a barrier between phases.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .privacy import (
    NoiseDraw,
    PrivacyBudget,
    SensitivityEstimate,
    init_estimate,
    real_sensitivity,
    sample_laplace,
    update_estimate,
)
from .topology import WeightMatrix

__all__ = [
    "NodeState",
    "ProtocolError",
    "RoundOutcome",
    "dpps_round",
    "initial_states",
    "network_mean",
    "synchronize",
]

SYNC_MODES = ("zeroed", "conservative")


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class NodeState:
    node_id: int
    shared: np.ndarray
    corrected: np.ndarray
    norm_scalar: float
    local: np.ndarray
    # None until the node's first perturbation after start or sync
    estimate: SensitivityEstimate | None = None
    # ||s^(0)||_1 term fed to the estimator at (re)initialization
    estimate_origin_l1: float = 0.0


@dataclass(frozen=True)
class RoundOutcome:
    states: list[NodeState]
    sensitivity_used: float
    esti_sensitivity: float
    real_sensitivity: float
    noise_draws: list[NoiseDraw]
    perturbations: np.ndarray

    @property
    def mean_eps_l1(self) -> float:
        return float(np.abs(self.perturbations).sum(axis=1).mean())

    @property
    def mean_noise_l1(self) -> float:
        return float(np.mean([d.l1_norm for d in self.noise_draws]))


def initial_states(shared: Sequence[np.ndarray], local: Sequence[np.ndarray] | None = None) -> list[NodeState]:
    """Fresh nodes with ``y = s`` and ``a = 1``."""
    if local is None:
        local = [np.zeros(0) for _ in shared]
    states = []
    for i, (s, l) in enumerate(zip(shared, local)):
        s = np.array(s, dtype=np.float64)
        states.append(
            NodeState(
                node_id=i,
                shared=s,
                corrected=s.copy(),
                norm_scalar=1.0,
                local=np.array(l, dtype=np.float64),
                estimate_origin_l1=float(np.abs(s).sum()),
            )
        )
    return states


def network_mean(states: Sequence[NodeState]) -> np.ndarray:
    return np.mean([st.shared for st in states], axis=0)


def _next_estimate(st: NodeState, eps_l1: float, budget: PrivacyBudget, c_prime: float, lam: float):
    if st.estimate is None:
        return init_estimate(st.estimate_origin_l1, eps_l1, c_prime, lam)
    return update_estimate(st.estimate, eps_l1, st.estimate.last_noise_l1, budget.gamma_n)


def dpps_round(
    states: Sequence[NodeState],
    w: WeightMatrix,
    perturbations: Sequence[np.ndarray] | np.ndarray,
    budget: PrivacyBudget,
    noise_enabled: bool,
    rng_streams: Sequence[np.random.Generator],
    *,
    c_prime: float,
    lam: float,
    sensitivity_mode: str = "estimated",
    hook: Callable[[str, dict], None] | None = None,
) -> RoundOutcome:
    """Run phases 1-5 for every node.

    ``sensitivity_mode="real"`` calibrates noise to the true max pairwise
    distance instead of the estimate (the estimator still runs and is
    logged). ``hook(phase, buffers)`` is called after each phase with the
    live arrays; it exists for instrumentation tests.
    """
    n = len(states)
    shared = np.stack([st.shared for st in states])
    eps = np.asarray(perturbations, dtype=np.float64)
    if eps.shape != shared.shape:
        raise ValueError(f"perturbations have shape {eps.shape}, shared state is {shared.shape}")
    if w.entries.shape != (n, n):
        raise ValueError(f"weight matrix is {w.entries.shape}, expected {(n, n)}")
    a = np.array([st.norm_scalar for st in states])

    # phase 1
    perturbed = shared + eps
    if hook:
        hook("perturb", {"perturbed": perturbed})

    # phase 2
    eps_l1 = np.abs(eps).sum(axis=1)
    estimates = [_next_estimate(st, float(eps_l1[i]), budget, c_prime, lam) for i, st in enumerate(states)]
    esti = max(est.value for est in estimates)
    real = real_sensitivity(perturbed)
    if sensitivity_mode == "estimated":
        scale_basis = esti
    elif sensitivity_mode == "real":
        scale_basis = real
    else:
        raise ValueError(f"unknown sensitivity_mode {sensitivity_mode!r}")
    if hook:
        hook("estimate", {"perturbed": perturbed, "sensitivity": scale_basis})

    # phase 3
    d = shared.shape[1]
    if noise_enabled and scale_basis > 0:
        draws = [sample_laplace(scale_basis / budget.b, d, rng_streams[i]) for i in range(n)]
    else:
        draws = [NoiseDraw(vector=np.zeros(d), scale=0.0, l1_norm=0.0) for _ in range(n)]
    noised = perturbed + budget.gamma_n * np.stack([dr.vector for dr in draws])
    estimates = [replace(est, last_noise_l1=dr.l1_norm) for est, dr in zip(estimates, draws)]
    if hook:
        hook("noise", {"perturbed": perturbed, "noised": noised})

    # phase 4
    new_shared = w.entries @ noised
    new_a = w.entries @ a
    if np.any(new_a <= 0):
        raise ProtocolError(f"non-positive normalizing scalar after mixing: {new_a.min()}")
    if hook:
        hook("aggregate", {"shared": new_shared, "norm_scalar": new_a})

    # phase 5
    corrected = new_shared / new_a[:, np.newaxis]

    new_states = [
        replace(st, shared=new_shared[i], corrected=corrected[i], norm_scalar=float(new_a[i]), estimate=estimates[i])
        for i, st in enumerate(states)
    ]
    return RoundOutcome(
        states=new_states,
        sensitivity_used=scale_basis,
        esti_sensitivity=esti,
        real_sensitivity=real,
        noise_draws=draws,
        perturbations=eps,
    )


def synchronize(states: Sequence[NodeState], reset_mode: str = "zeroed") -> list[NodeState]:
    """Exact average of the (already noised) shared vectors across all nodes.

    ``zeroed`` restarts every estimator with no initial-distance term since
    all nodes are now identical; ``conservative`` keeps the literal round-0
    term ``2 C' ||s_sync||_1``.
    """
    if reset_mode not in SYNC_MODES:
        raise ValueError(f"reset_mode must be one of {SYNC_MODES}, got {reset_mode!r}")
    # offset form keeps an already-identical network bit-exact
    base = states[0].shared
    mean = base + np.mean([st.shared - base for st in states], axis=0)
    origin = 0.0 if reset_mode == "zeroed" else float(np.abs(mean).sum())
    return [
        replace(
            st,
            shared=mean.copy(),
            corrected=mean.copy(),
            norm_scalar=1.0,
            estimate=None,
            estimate_origin_l1=origin,
        )
        for st in states
    ]

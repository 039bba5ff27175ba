"""Laplace mechanism, per-node sensitivity estimation and the privacy accountant.

Each node tracks a scalar upper bound on how far its outgoing shared
vector can sit from any other node's. The bound is updated from two
locally known quantities: the L1 norm of this round's perturbation and
the L1 norm of the noise the node injected in the previous round. The
network uses the maximum of these scalars as the Laplace sensitivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

__all__ = [
    "NoiseDraw",
    "PrivacyBudget",
    "SensitivityEstimate",
    "init_estimate",
    "laplace_density",
    "network_sensitivity",
    "privacy_budget",
    "real_sensitivity",
    "sample_laplace",
    "update_estimate",
]

_MANTISSA_BITS = 52


@dataclass(frozen=True)
class SensitivityEstimate:
    value: float
    c_prime: float
    lam: float
    last_noise_l1: float = 0.0
    round: int = 0


@dataclass(frozen=True)
class NoiseDraw:
    vector: np.ndarray
    scale: float
    l1_norm: float


@dataclass(frozen=True)
class PrivacyBudget:
    b: float
    gamma_n: float
    epsilon_per_round: float


def _check_constants(c_prime: float, lam: float) -> None:
    if not c_prime > 0:
        raise ValueError(f"c_prime must be positive, got {c_prime}")
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")


def init_estimate(s0_l1: float, eps0_l1: float, c_prime: float, lam: float) -> SensitivityEstimate:
    """Round-0 estimate ``2 C' (||s0||_1 + ||eps0||_1)``."""
    _check_constants(c_prime, lam)
    value = 2.0 * c_prime * s0_l1 + 2.0 * c_prime * eps0_l1
    return SensitivityEstimate(value=value, c_prime=c_prime, lam=lam, last_noise_l1=0.0, round=0)


def update_estimate(
    est: SensitivityEstimate, eps_l1: float, prev_noise_l1: float, gamma_n: float
) -> SensitivityEstimate:
    """One step of the geometric recursion.

    ``value <- lam * value + 2 C' (eps_l1 + lam * gamma_n * prev_noise_l1)``
    """
    lam, c = est.lam, est.c_prime
    value = lam * est.value + 2.0 * c * (eps_l1 + lam * gamma_n * prev_noise_l1)
    return replace(est, value=value, round=est.round + 1)


def sample_laplace(scale: float, dim: int, rng: np.random.Generator) -> NoiseDraw:
    """Draw ``dim`` i.i.d. Lap(0, scale) values by inverse CDF.

    The uniform variate is ``(k + 1/2) / 2**52 - 1/2`` for a random 52-bit
    integer ``k``, which is exact in double precision and never touches
    +-1/2, so the logarithm stays finite. ``scale == 0`` returns an exact
    zero draw without consuming randomness.
    """
    if dim < 1:
        raise ValueError(f"dim must be positive, got {dim}")
    if not (scale >= 0 and math.isfinite(scale)):
        raise ValueError(f"Laplace scale must be finite and non-negative, got {scale}")
    if scale == 0:
        return NoiseDraw(vector=np.zeros(dim), scale=0.0, l1_norm=0.0)
    k = rng.integers(0, 1 << _MANTISSA_BITS, size=dim, dtype=np.int64)
    u = (k + 0.5) * 2.0**-_MANTISSA_BITS - 0.5
    x = -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return NoiseDraw(vector=x, scale=float(scale), l1_norm=float(np.abs(x).sum()))


def laplace_density(x, scale: float):
    return np.exp(-np.abs(x) / scale) / (2.0 * scale)


def real_sensitivity(shared_vectors: Sequence[np.ndarray] | np.ndarray) -> float:
    """Maximum pairwise L1 distance between the nodes' shared vectors."""
    mat = np.asarray(shared_vectors, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError("shared vectors must all have the same dimension")
    n = mat.shape[0]
    if n < 2:
        return 0.0
    best = 0.0
    # row-at-a-time keeps memory at O(N * d) for large d
    for i in range(n - 1):
        dist = np.abs(mat[i + 1 :] - mat[i]).sum(axis=1).max()
        if dist > best:
            best = float(dist)
    return best


def network_sensitivity(estimates: Sequence[SensitivityEstimate]) -> float:
    return max(est.value for est in estimates)


def privacy_budget(b: float, gamma_n: float) -> PrivacyBudget:
    """Per-round guarantee: Laplace noise at S/b scaled by gamma_n gives (b/gamma_n)-DP."""
    if not b > 0:
        raise ValueError(f"b must be positive, got {b}")
    if not gamma_n > 0:
        raise ValueError(f"gamma_n must be positive, got {gamma_n}")
    return PrivacyBudget(b=b, gamma_n=gamma_n, epsilon_per_round=b / gamma_n)

"""Empirical fitting of the sensitivity-estimator constants (C', lambda).

Given recorded per-node perturbation and noise norms, the estimate is
linear in C', so for every lambda on a grid the smallest admissible C'
is ``max_t real(t) / max_i U_i(t; lambda)`` where ``U`` is the estimate
computed with C' = 1. The lambda giving the tightest mean estimate wins,
and C' is inflated by the requested headroom.

Fitting starts from a noiseless run. When privacy is enabled the noise
itself depends on the constants, so the fit is repeated on noisy runs
made with the current constants until they need no further increase.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .runner import run_experiment

DEFAULT_LAMBDA_GRID = tuple(np.round(np.arange(0.05, 0.96, 0.01), 2))


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Calibration:
    c_prime: float
    lam: float
    required_c_prime: float
    headroom: float
    iterations: int
    seeds: list

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def unit_estimates(trace: dict, lam: np.ndarray, gamma_n: float) -> np.ndarray:
    """Replay the estimator recursion with C' = 1 for each lambda.

    Returns the network maximum per round, shape ``(len(lam), rounds)``.
    """
    lam = np.asarray(lam, dtype=float)[:, None]
    eps, noise, fresh, origin = trace["eps_l1"], trace["noise_l1"], trace["fresh"], trace["origin_l1"]
    rounds, n = eps.shape
    u = np.zeros((lam.shape[0], n))
    out = np.empty((lam.shape[0], rounds))
    for t in range(rounds):
        prev_noise = noise[t - 1] if t > 0 else np.zeros(n)
        cont = lam * u + 2.0 * (eps[t] + lam * gamma_n * prev_noise)
        restart = 2.0 * (origin[t] + eps[t])
        u = np.where(fresh[t].astype(bool), restart, cont)
        out[:, t] = u.max(axis=1)
    return out


def required_c_prime(traces: Sequence[dict], lam: np.ndarray, gamma_n: float) -> tuple[np.ndarray, np.ndarray]:
    """Smallest C' per lambda keeping estimate >= real at every round t > 0 of every trace.

    Also returns the mean unit estimate per lambda, used as the tightness score.
    """
    req = np.zeros(len(lam))
    mean_unit = np.zeros(len(lam))
    for trace in traces:
        unit = unit_estimates(trace, lam, gamma_n)[:, 1:]
        real = trace["real"][1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(unit > 0, real / unit, np.where(real > 0, np.inf, 0.0))
        req = np.maximum(req, ratio.max(axis=1))
        mean_unit += unit.mean(axis=1) / len(traces)
    return req, mean_unit


def _fit(traces, grid, gamma_n):
    req, mean_unit = required_c_prime(traces, grid, gamma_n)
    score = req * mean_unit
    best = int(np.argmin(np.where(np.isfinite(score), score, np.inf)))
    if not np.isfinite(req[best]) or req[best] <= 0:
        raise CalibrationError("no finite C' fits the recorded trace")
    return float(grid[best]), float(req[best])


def _traces(cfg: ExperimentConfig, seeds: Sequence[int]) -> list[dict]:
    return [
        run_experiment(replace_seed(cfg, s), write=False, record_trace=True).trace
        for s in seeds
    ]


def replace_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return cfg.with_updates(master_seed=seed)


def calibrate(
    config: ExperimentConfig,
    headroom: float = 0.1,
    seeds: Sequence[int] | None = None,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    max_iter: int = 10,
) -> Calibration:
    if headroom < 0:
        raise ValueError("headroom must be non-negative")
    seeds = list(seeds) if seeds else [config.master_seed]
    grid = np.asarray(lambda_grid, dtype=float)
    gamma_n = config.privacy.gamma_n

    noiseless = config.with_updates(privacy={"enabled": False})
    lam, req = _fit(_traces(noiseless, seeds), grid, gamma_n)
    c_prime = req * (1.0 + headroom)
    if not config.privacy.enabled:
        return Calibration(c_prime, lam, req, headroom, 0, seeds)

    for it in range(1, max_iter + 1):
        noisy = config.with_updates(privacy={"c_prime": c_prime, "lam": lam})
        traces = _traces(noisy, seeds)
        req_here, _ = required_c_prime(traces, np.array([lam]), gamma_n)
        if req_here[0] * (1.0 + headroom) <= c_prime:
            return Calibration(c_prime, lam, float(req_here[0]), headroom, it, seeds)
        lam, req = _fit(traces, grid, gamma_n)
        c_prime = max(c_prime, req * (1.0 + headroom))
    raise CalibrationError(f"constants did not settle after {max_iter} noisy refits (last C'={c_prime:.4g})")


def write_calibration(cal: Calibration, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cal.to_json() + "\n")
    return path

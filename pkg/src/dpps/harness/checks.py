"""Runtime invariant checks on a (shortened) configured run."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..protocol import network_mean
from .config import ExperimentConfig
from .runner import run_experiment

A_TOL = 1e-12
MEAN_TOL = 1e-10
STOCHASTIC_TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.name}: {self.detail}"


def check_invariants(config: ExperimentConfig, rounds: int = 50) -> list[CheckResult]:
    """Doubly-stochastic mixing, a == 1, mean dynamics and estimate >= real, every round."""
    cfg = config.with_updates(optimizer={"rounds": min(rounds, config.optimizer.rounds), "epochs": 0})
    worst = {"stochastic": 0.0, "a": 0.0, "mean": 0.0}
    violations = []
    gamma_n = cfg.privacy.gamma_n

    def on_round(t, pre, outcome, w):
        if t > 0 and outcome.real_sensitivity > outcome.esti_sensitivity:
            violations.append((t, outcome.real_sensitivity, outcome.esti_sensitivity))
        worst["stochastic"] = max(worst["stochastic"], w.row_deviation(), w.column_deviation())
        a = np.array([st.norm_scalar for st in outcome.states])
        worst["a"] = max(worst["a"], float(np.abs(a - 1.0).max()))
        noise = np.stack([d.vector for d in outcome.noise_draws])
        expected = network_mean(pre) + outcome.perturbations.mean(axis=0) + gamma_n * noise.mean(axis=0)
        worst["mean"] = max(worst["mean"], float(np.abs(network_mean(outcome.states) - expected).max()))

    run_experiment(cfg, write=False, on_round=on_round)
    if violations:
        t, real, esti = violations[0]
        detail = (
            f"{len(violations)} violating rounds, first at round {t}: real {real:.6g} > estimate {esti:.6g} "
            f"(c_prime={cfg.privacy.c_prime}, lambda={cfg.privacy.lam})"
        )
    else:
        detail = f"rounds 1..{cfg.optimizer.rounds - 1}"
    return [
        CheckResult("estimate dominates real sensitivity", not violations, detail),
        CheckResult(
            "doubly stochastic weights",
            worst["stochastic"] < STOCHASTIC_TOL,
            f"max row/column deviation {worst['stochastic']:.3g}",
        ),
        CheckResult("normalizing scalar stays 1", worst["a"] < A_TOL, f"max |a - 1| = {worst['a']:.3g}"),
        CheckResult(
            "mean dynamics identity",
            worst["mean"] < MEAN_TOL,
            f"max per-coordinate residual {worst['mean']:.3g}",
        ),
    ]

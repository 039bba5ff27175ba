"""Time-varying directed graph schedules and their mixing matrices.

An edge ``(i, j)`` at round ``t`` means node ``i`` sends to node ``j``.
Every round carries all self-loops. Mixing weights are uniform in the
sender's out-degree, so column sums are 1 by construction and row sums
are 1 whenever in-flows balance (always true for d-Out and EXP).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ConnectivityError",
    "GraphSchedule",
    "ScheduleError",
    "WeightMatrix",
    "build_custom_schedule",
    "build_d_out_schedule",
    "build_exp_schedule",
    "exp_period",
    "load_custom_schedule",
    "verify_connectivity",
    "weight_matrix",
]

STOCHASTIC_TOL = 1e-12


class ScheduleError(ValueError):
    """Invalid schedule parameters or a non doubly-stochastic topology."""


class ConnectivityError(ScheduleError):
    """No aggregation window up to the limit yields strongly connected graphs."""


def exp_period(n_nodes: int) -> int:
    """Number of distinct offsets of the exponential graph, floor(log2(N-1)) + 1."""
    if n_nodes < 2:
        raise ScheduleError(f"EXP graph needs n_nodes >= 2, got {n_nodes}")
    # floor(log2(m)) + 1 == m.bit_length(), without float rounding
    return (n_nodes - 1).bit_length()


@dataclass(frozen=True)
class GraphSchedule:
    n_nodes: int
    kind: str
    period: int
    d: int | None = None
    # custom only: per-round frozenset of (sender, receiver), self-loops included
    rounds: tuple[frozenset, ...] = field(default=(), repr=False)

    def out_neighbors(self, i: int, t: int) -> list[int]:
        n = self.n_nodes
        if self.kind == "d_out":
            return [(i + k) % n for k in range(self.d)]
        if self.kind == "exp":
            offset = 2 ** (t % self.period)
            return sorted({i, (i + offset) % n})
        edges = self.rounds[t % self.period]
        return sorted(j for (src, j) in edges if src == i)

    def adjacency(self, t: int) -> np.ndarray:
        """Boolean matrix ``A[i, j]``: node i sends to node j at round t."""
        n = self.n_nodes
        adj = np.zeros((n, n), dtype=bool)
        for i in range(n):
            adj[i, self.out_neighbors(i, t)] = True
        return adj

    def edges(self, t: int) -> set[tuple[int, int]]:
        return {(i, j) for i in range(self.n_nodes) for j in self.out_neighbors(i, t)}


@dataclass(frozen=True)
class WeightMatrix:
    """``entries[i, j]`` is the weight node i applies to the message from j."""

    entries: np.ndarray
    round: int

    def row_deviation(self) -> float:
        return float(np.max(np.abs(self.entries.sum(axis=1) - 1.0)))

    def column_deviation(self) -> float:
        return float(np.max(np.abs(self.entries.sum(axis=0) - 1.0)))

    def is_doubly_stochastic(self, tol: float = STOCHASTIC_TOL) -> bool:
        return self.row_deviation() < tol and self.column_deviation() < tol


def build_d_out_schedule(n_nodes: int, d: int) -> GraphSchedule:
    """Static graph where node i sends to i, i+1, ..., i+d-1 (mod N)."""
    if n_nodes < 2:
        raise ScheduleError(f"d-Out graph needs n_nodes >= 2, got {n_nodes}")
    if not 2 <= d <= n_nodes:
        raise ScheduleError(f"d-Out out-degree must satisfy 2 <= d <= N={n_nodes}, got d={d}")
    return GraphSchedule(n_nodes=n_nodes, kind="d_out", period=1, d=d)


def build_exp_schedule(n_nodes: int) -> GraphSchedule:
    """Time-varying graph: at round t node i sends to i + 2**(t mod period)."""
    return GraphSchedule(n_nodes=n_nodes, kind="exp", period=exp_period(n_nodes))


def weight_matrix(schedule: GraphSchedule, t: int) -> WeightMatrix:
    adj = schedule.adjacency(t)
    out_deg = adj.sum(axis=1)
    # w[i, j] = 1/outdeg(j) for every edge j -> i
    entries = adj.T / out_deg[np.newaxis, :]
    return WeightMatrix(entries=entries, round=t)


def _reachability_steps(adj: np.ndarray) -> int | None:
    """Diameter of a directed graph given as a boolean matrix; None if not strongly connected."""
    n = adj.shape[0]
    step = adj | np.eye(n, dtype=bool)
    reach = np.eye(n, dtype=bool)
    for hops in range(n):
        if reach.all():
            return hops
        nxt = (reach.astype(np.int64) @ step.astype(np.int64)) > 0
        if (nxt == reach).all():
            return None
        reach = nxt
    return n - 1 if reach.all() else None


def verify_connectivity(schedule: GraphSchedule, max_window: int) -> tuple[int, int]:
    """Smallest window B and max diameter of all B-round aggregate graphs.

    Every start round within one period is checked. Raises
    ``ConnectivityError`` when no B <= max_window works.
    """
    if max_window < 1:
        raise ValueError("max_window must be positive")
    adjs = [schedule.adjacency(t) for t in range(schedule.period)]
    for window in range(1, max_window + 1):
        diameters = []
        for start in range(schedule.period):
            agg = np.zeros_like(adjs[0])
            for k in range(window):
                agg |= adjs[(start + k) % schedule.period]
            diam = _reachability_steps(agg)
            if diam is None:
                break
            diameters.append(diam)
        else:
            return window, max(diameters)
    raise ConnectivityError(
        f"{schedule.kind} schedule on {schedule.n_nodes} nodes is not strongly "
        f"connected within any window of up to {max_window} rounds"
    )


def build_custom_schedule(n_nodes: int, round_edges: list[set[tuple[int, int]]]) -> GraphSchedule:
    """Schedule from explicit (sender, receiver) edges per round, repeated periodically.

    Self-loops are added. Rejects topologies whose uniform weights are not
    doubly stochastic or which never become strongly connected.
    """
    if n_nodes < 1:
        raise ScheduleError("n_nodes must be positive")
    if not round_edges:
        raise ScheduleError("custom schedule needs at least one round")
    rounds = []
    for t, edges in enumerate(round_edges):
        full = set()
        for i, j in edges:
            if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                raise ScheduleError(f"round {t}: edge ({i}, {j}) outside [0, {n_nodes})")
            full.add((int(i), int(j)))
        full.update((i, i) for i in range(n_nodes))
        rounds.append(frozenset(full))
    schedule = GraphSchedule(n_nodes=n_nodes, kind="custom", period=len(rounds), rounds=tuple(rounds))
    for t in range(schedule.period):
        w = weight_matrix(schedule, t)
        if not w.is_doubly_stochastic():
            raise ScheduleError(
                f"round {t}: uniform out-degree weights are not doubly stochastic "
                f"(max row-sum deviation {w.row_deviation():.3g})"
            )
    if n_nodes > 1:
        verify_connectivity(schedule, schedule.period)
    return schedule


def load_custom_schedule(path: str | Path, n_nodes: int) -> GraphSchedule:
    """Read newline-delimited ``t i j`` triples (node i sends to node j at round t)."""
    path = Path(path)
    by_round: dict[int, set[tuple[int, int]]] = {}
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ScheduleError(f"{path}:{lineno}: expected 't i j', got {line!r}")
            t, i, j = (int(p) for p in parts)
            if t < 0:
                raise ScheduleError(f"{path}:{lineno}: negative round {t}")
            by_round.setdefault(t, set()).add((i, j))
    if not by_round:
        raise ScheduleError(f"{path}: no edges")
    period = max(by_round) + 1
    return build_custom_schedule(n_nodes, [by_round.get(t, set()) for t in range(period)])


def describe(schedule: GraphSchedule) -> str:
    if schedule.kind == "d_out":
        return f"{schedule.d}-Out(N={schedule.n_nodes})"
    if schedule.kind == "exp":
        return f"EXP(N={schedule.n_nodes}, period={schedule.period})"
    return f"custom(N={schedule.n_nodes}, period={schedule.period})"

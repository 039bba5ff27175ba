"""End-to-end PartPSP experiments, sweeps and metrics files."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..optimizer import DpSettings, OptimizerConfig, RoundMetrics, partpsp_round
from ..privacy import privacy_budget
from ..protocol import NodeState, RoundOutcome, initial_states
from ..rng import node_streams
from ..tasks import (
    Dataset,
    DivergenceError,
    MlpSpec,
    MlpTask,
    evaluate_network,
    load_mnist_idx,
    make_shards,
    make_synthetic_dataset,
)
from ..topology import GraphSchedule, WeightMatrix, build_d_out_schedule, build_exp_schedule, load_custom_schedule, weight_matrix
from .config import ExperimentConfig, dump_config

__all__ = [
    "METRICS_COLUMNS",
    "RunAborted",
    "RunResult",
    "RunSummary",
    "SensitivityViolation",
    "SweepError",
    "SweepRow",
    "build_schedule",
    "emit_metrics",
    "prepare",
    "run_experiment",
    "run_sensitivity_sweep",
]

METRICS_COLUMNS = (
    "round",
    "esti_sensitivity",
    "real_sensitivity",
    "mean_eps_l1",
    "mean_noise_l1",
    "loss_mean",
    "delta_l",
    "delta_sbar",
    "ras_running",
    "epsilon_per_round",
    "synced",
)
SWEEP_AXES = ("shared_layers", "out_degree", "n_nodes")


class RunAborted(RuntimeError):
    """Non-finite values mid-run."""


class SensitivityViolation(AssertionError):
    """Real sensitivity exceeded the estimate (test mode only)."""


class SweepError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunSummary:
    final_acc: float
    per_node_acc: list
    ras: float
    peak_sensitivity: float
    peak_esti_sensitivity: float
    final_loss: float
    total_rounds: int
    wall_time: float


@dataclass
class RunResult:
    summary: RunSummary
    metrics: list[RoundMetrics]
    states: list[NodeState]
    trace: dict | None = None


@dataclass
class Prepared:
    """Everything a run needs, built deterministically from the config."""

    config: ExperimentConfig
    schedule: GraphSchedule
    task: MlpTask
    train: Dataset
    test: Dataset
    eval_batch: Dataset
    shards: list
    states: list[NodeState]
    noise_streams: list
    opt: OptimizerConfig
    dp: DpSettings


def build_schedule(cfg: ExperimentConfig) -> GraphSchedule:
    top = cfg.topology
    if top.kind == "d_out":
        return build_d_out_schedule(top.n_nodes, top.d)
    if top.kind == "exp":
        return build_exp_schedule(top.n_nodes)
    return load_custom_schedule(top.rounds_file, top.n_nodes)


def _datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    task = cfg.task
    if task.kind == "mnist":
        return (
            load_mnist_idx(task.train_images, task.train_labels),
            load_mnist_idx(task.test_images, task.test_labels),
        )
    full = make_synthetic_dataset(
        task.n_examples + task.n_test, task.n_features, task.n_classes, task.separation, cfg.master_seed
    )
    idx = np.arange(len(full))
    return full.subset(idx[: task.n_examples]), full.subset(idx[task.n_examples :])


def _mlp_spec(cfg: ExperimentConfig, train: Dataset) -> MlpSpec:
    hidden = 10 if cfg.task.kind == "mnist" else cfg.task.hidden
    return MlpSpec.three_layer(train.n_features, hidden, train.n_classes)


def prepare(cfg: ExperimentConfig) -> Prepared:
    schedule = build_schedule(cfg)
    train, test = _datasets(cfg)
    part = cfg.partition
    task = MlpTask.build(_mlp_spec(cfg, train), part.scheme, k=part.k, tags=part.tags or None)

    n = cfg.topology.n_nodes
    streams = node_streams(cfg.master_seed, n)
    if cfg.task.init == "identical":
        s0, l0 = task.init_params(streams[0].init)
        params = [(s0.copy(), l0.copy()) for _ in range(n)]
    else:
        params = [task.init_params(st.init) for st in streams]
    states = initial_states([p[0] for p in params], [p[1] for p in params])

    o = cfg.optimizer
    shards = make_shards(len(train), n, cfg.master_seed, o.batch_size)
    rounds = o.epochs * max(sh.batches_per_epoch for sh in shards) if o.epochs > 0 else o.rounds
    eval_rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 0xE7A1]))
    eval_idx = np.sort(eval_rng.choice(len(train), size=min(o.eval_batch_size, len(train)), replace=False))

    opt = OptimizerConfig(
        gamma_l=o.gamma_l,
        gamma_s=o.gamma_s,
        clip_threshold=o.clip_threshold,
        rounds=rounds,
        sync_interval=cfg.protocol.sync_interval,
        metrics_interval=o.metrics_interval,
    )
    p = cfg.privacy
    dp = DpSettings(
        budget=privacy_budget(p.b, p.gamma_n),
        enabled=p.enabled,
        c_prime=p.c_prime,
        lam=p.lam,
        sensitivity_mode=p.sensitivity,
        sync_reset_mode=cfg.protocol.sync_reset_mode,
    )
    return Prepared(
        config=cfg,
        schedule=schedule,
        task=task,
        train=train,
        test=test,
        eval_batch=train.subset(eval_idx),
        shards=shards,
        states=states,
        noise_streams=[st.noise for st in streams],
        opt=opt,
        dp=dp,
    )


RoundCallback = Callable[[int, Sequence[NodeState], RoundOutcome, WeightMatrix], None]


def _execute(
    prep: Prepared,
    test_mode: bool = False,
    on_round: RoundCallback | None = None,
    record_trace: bool = False,
) -> RunResult:
    started = time.perf_counter()
    cfg, opt, dp = prep.config, prep.opt, prep.dp
    states = prep.states
    rows: list[RoundMetrics] = []
    real_sum = 0.0
    trace = {"real": [], "eps_l1": [], "noise_l1": [], "fresh": [], "origin_l1": []} if record_trace else None
    for t in range(opt.rounds):
        w = weight_matrix(prep.schedule, t)
        if trace is not None:
            trace["fresh"].append([st.estimate is None for st in states])
            trace["origin_l1"].append([st.estimate_origin_l1 for st in states])
        try:
            outcome, m = partpsp_round(
                states, prep.task, prep.train, prep.shards, w, opt, dp, prep.noise_streams, t, prep.eval_batch
            )
        except DivergenceError as err:
            raise RunAborted(f"round {t}: {err}") from err
        if not (math.isfinite(m.esti_sensitivity) and math.isfinite(m.real_sensitivity)):
            raise RunAborted(
                f"round {t}: non-finite sensitivity (esti={m.esti_sensitivity}, real={m.real_sensitivity})"
            )
        if test_mode and t > 0 and m.real_sensitivity > m.esti_sensitivity:
            raise SensitivityViolation(
                f"round {t}: real sensitivity {m.real_sensitivity:.6g} exceeds estimate "
                f"{m.esti_sensitivity:.6g} (c_prime={dp.c_prime}, lambda={dp.lam})"
            )
        if on_round is not None:
            on_round(t, states, outcome, w)
        if trace is not None:
            trace["real"].append(m.real_sensitivity)
            trace["eps_l1"].append(np.abs(outcome.perturbations).sum(axis=1))
            trace["noise_l1"].append([d.l1_norm for d in outcome.noise_draws])
        real_sum += m.real_sensitivity
        rows.append(replace(m, ras_running=real_sum / (t + 1)))
        states = outcome.states

    per_node, final_acc = evaluate_network(states, prep.task, prep.test)
    summary = RunSummary(
        final_acc=final_acc,
        per_node_acc=per_node,
        ras=real_sum / len(rows),
        peak_sensitivity=max(r.real_sensitivity for r in rows),
        peak_esti_sensitivity=max(r.esti_sensitivity for r in rows),
        final_loss=rows[-1].loss_mean,
        total_rounds=len(rows),
        wall_time=time.perf_counter() - started,
    )
    if trace is not None:
        trace = {k: np.asarray(v, dtype=float) for k, v in trace.items()}
    return RunResult(summary=summary, metrics=rows, states=states, trace=trace)


def run_experiment(
    config: ExperimentConfig,
    *,
    write: bool = True,
    test_mode: bool = False,
    on_round: RoundCallback | None = None,
    record_trace: bool = False,
) -> RunResult:
    """Run PartPSP as configured and (optionally) write metrics.csv, summary.json, config.toml.

    ``test_mode`` raises :class:`SensitivityViolation` on the first round
    t > 0 where the real sensitivity exceeds the estimate.
    """
    result = _execute(prepare(config), test_mode=test_mode, on_round=on_round, record_trace=record_trace)
    if write:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        emit_metrics(result.metrics, out / "metrics.csv")
        (out / "summary.json").write_text(json.dumps(asdict(result.summary), indent=2) + "\n")
        (out / "config.toml").write_text(dump_config(config))
    return result


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return format(float(value), ".17g")


def emit_metrics(rows: Sequence[RoundMetrics], path) -> Path:
    """Write rows as CSV with a fixed header; floats at 17 significant digits."""
    if not rows:
        raise ValueError("no metrics rows to write")
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRICS_COLUMNS)
            for r in rows:
                writer.writerow([_fmt(getattr(r, c)) for c in METRICS_COLUMNS])
    except OSError as err:
        raise OSError(f"cannot write metrics to {path}: {err}") from err
    return path


def read_metrics(path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))


@dataclass(frozen=True)
class SweepRow:
    axis_value: int
    ras: float
    peak_sensitivity: float
    final_acc: float


def sweep_config(base: ExperimentConfig, axis: str, value: int) -> ExperimentConfig:
    if axis == "shared_layers":
        return base.with_updates(partition={"scheme": "share_first_k", "k": int(value)})
    if axis == "out_degree":
        return base.with_updates(topology={"kind": "d_out", "d": int(value)})
    if axis == "n_nodes":
        return base.with_updates(topology={"n_nodes": int(value)})
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def run_sensitivity_sweep(
    base: ExperimentConfig, axis: str, values: Sequence[int], *, write: bool = True
) -> list[SweepRow]:
    """One run per axis value with the base seed; optionally writes sweep.csv."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    rows = []
    for v in values:
        try:
            res = run_experiment(sweep_config(base, axis, v), write=False)
        except Exception as err:
            raise SweepError(f"{axis}={v}: {err}") from err
        rows.append(SweepRow(int(v), res.summary.ras, res.summary.peak_sensitivity, res.summary.final_acc))
    if write:
        out = Path(base.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "sweep.csv").open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["axis", "axis_value", "ras", "peak_sensitivity", "final_acc"])
            for r in rows:
                writer.writerow([axis, r.axis_value, _fmt(r.ras), _fmt(r.peak_sensitivity), _fmt(r.final_acc)])
    return rows

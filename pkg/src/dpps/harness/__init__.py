"""Configuration, experiment runner, calibration and CLI."""

from .calibrate import Calibration, CalibrationError, calibrate
from .checks import CheckResult, check_invariants
from .config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config
from .runner import (
    RunAborted,
    RunResult,
    RunSummary,
    SensitivityViolation,
    SweepError,
    SweepRow,
    emit_metrics,
    read_metrics,
    run_experiment,
    run_sensitivity_sweep,
)
from ..optimizer import RoundMetrics

__all__ = [
    "Calibration",
    "CalibrationError",
    "CheckResult",
    "ConfigError",
    "ExperimentConfig",
    "RoundMetrics",
    "RunAborted",
    "RunResult",
    "RunSummary",
    "SensitivityViolation",
    "SweepError",
    "SweepRow",
    "calibrate",
    "check_invariants",
    "dump_config",
    "emit_metrics",
    "load_config",
    "parse_config",
    "read_metrics",
    "run_experiment",
    "run_sensitivity_sweep",
]

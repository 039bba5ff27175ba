"""Experiment configuration: TOML sections mapped onto dataclasses.

Every key has a default, so a config file only needs the values it
changes. :func:`dump_config` writes all keys, which makes saved configs
complete reproducibility records.
"""

from __future__ import annotations

import sys
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "apply_overrides",
    "dump_config",
    "load_config",
    "parse_config",
    "validate",
]

DEFAULT_SEED = 2024


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""


@dataclass(frozen=True)
class TopologySection:
    kind: str = "exp"
    n_nodes: int = 10
    d: int = 2
    rounds_file: str = ""


@dataclass(frozen=True)
class PrivacySection:
    enabled: bool = True
    b: float = 5.0
    gamma_n: float = 0.01
    c_prime: float = 0.78
    lam: float = 0.55
    # "estimated" uses the push-sum bound, "real" the true max pairwise distance
    sensitivity: str = "estimated"


@dataclass(frozen=True)
class ProtocolSection:
    sync_interval: int = 5
    sync_reset_mode: str = "zeroed"


@dataclass(frozen=True)
class OptimizerSection:
    gamma_l: float = 0.1
    gamma_s: float = 0.1
    clip_threshold: float = 10.0
    rounds: int = 300
    # when > 0, overrides rounds with epochs * ceil(shard / batch_size)
    epochs: int = 0
    batch_size: int = 100
    metrics_interval: int = 10
    eval_batch_size: int = 500


@dataclass(frozen=True)
class PartitionSection:
    scheme: str = "share_first_k"
    k: int = 1
    tags: list = field(default_factory=list)


@dataclass(frozen=True)
class TaskSection:
    kind: str = "synthetic"
    n_examples: int = 10000
    n_test: int = 2000
    n_features: int = 32
    n_classes: int = 8
    hidden: int = 8
    separation: float = 4.0
    init: str = "independent"
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""


SECTIONS = {
    "topology": TopologySection,
    "privacy": PrivacySection,
    "protocol": ProtocolSection,
    "optimizer": OptimizerSection,
    "partition": PartitionSection,
    "task": TaskSection,
}

# TOML key -> dataclass attribute where they differ
_RENAMES = {("privacy", "lambda"): "lam"}
_REVERSE = {(sec, attr): key for (sec, key), attr in _RENAMES.items()}


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = DEFAULT_SEED
    output_dir: str = "runs/default"
    topology: TopologySection = field(default_factory=TopologySection)
    privacy: PrivacySection = field(default_factory=PrivacySection)
    protocol: ProtocolSection = field(default_factory=ProtocolSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    partition: PartitionSection = field(default_factory=PartitionSection)
    task: TaskSection = field(default_factory=TaskSection)

    def with_updates(self, **sections: dict[str, Any]) -> "ExperimentConfig":
        """Copy with some section keys replaced, e.g. ``with_updates(topology={"d": 4})``."""
        changes = {}
        for name, values in sections.items():
            if name in SECTIONS:
                changes[name] = replace(getattr(self, name), **values)
            else:
                changes[name] = values
        return replace(self, **changes)


def _coerce(section: str, key: str, value: Any, target: type | str):
    kind = target if isinstance(target, str) else target.__name__
    where = f"{section}.{key}" if section else key
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if kind == "list":
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return list(value)
    raise ConfigError(f"{where}: unsupported type {kind}")


def _build_section(name: str, raw: dict) -> Any:
    cls = SECTIONS[name]
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected a table")
    types = {f.name: f.type for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        attr = _RENAMES.get((name, key), key)
        if attr not in types or (name, attr) in _REVERSE and key != _REVERSE[(name, attr)]:
            raise ConfigError(f"{name}.{key}: unknown key")
        kwargs[attr] = _coerce(name, key, value, types[attr])
    return cls(**kwargs)


def parse_config(raw: dict) -> ExperimentConfig:
    kwargs = {}
    for key, value in raw.items():
        if key in SECTIONS:
            kwargs[key] = _build_section(key, value)
        elif key == "master_seed":
            kwargs[key] = _coerce("", key, value, "int")
        elif key == "output_dir":
            kwargs[key] = _coerce("", key, value, "str")
        else:
            raise ConfigError(f"{key}: unknown key")
    cfg = ExperimentConfig(**kwargs)
    validate(cfg)
    return cfg


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError as err:
        raise ConfigError(f"{path}: no such file") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    return parse_config(apply_overrides(raw, overrides or []))


def _parse_scalar(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings to a raw config dict (values parsed as TOML)."""
    raw = {k: dict(v) if isinstance(v, dict) else v for k, v in raw.items()}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"{item}: override must look like section.key=value")
        dotted, text = item.split("=", 1)
        parts = dotted.strip().split(".")
        value = _parse_scalar(text.strip())
        if len(parts) == 1:
            raw[parts[0]] = value
        elif len(parts) == 2:
            raw.setdefault(parts[0], {})[parts[1]] = value
        else:
            raise ConfigError(f"{dotted}: override keys have at most one dot")
    return raw


def to_dict(cfg: ExperimentConfig) -> dict:
    out: dict[str, Any] = {"master_seed": cfg.master_seed, "output_dir": cfg.output_dir}
    for name in SECTIONS:
        sec = asdict(getattr(cfg, name))
        out[name] = {_REVERSE.get((name, k), k): v for k, v in sec.items()}
    return out


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def validate(cfg: ExperimentConfig) -> None:
    """Cross-field checks. Raises ConfigError; soft problems only warn."""
    top, priv, proto, opt, part, task = (
        cfg.topology, cfg.privacy, cfg.protocol, cfg.optimizer, cfg.partition, cfg.task
    )
    if top.kind not in ("d_out", "exp", "custom"):
        raise ConfigError(f"topology.kind: expected d_out, exp or custom, got {top.kind!r}")
    if top.n_nodes < 1 or (top.kind != "custom" and top.n_nodes < 2):
        raise ConfigError(f"topology.n_nodes: too small ({top.n_nodes})")
    if top.kind == "d_out" and not 2 <= top.d <= top.n_nodes:
        raise ConfigError(f"topology.d: need 2 <= d <= n_nodes, got {top.d}")
    if top.kind == "custom" and not top.rounds_file:
        raise ConfigError("topology.rounds_file: required for custom topologies")

    if not priv.b > 0:
        raise ConfigError(f"privacy.b: must be positive, got {priv.b}")
    if not priv.gamma_n > 0:
        raise ConfigError(f"privacy.gamma_n: must be positive, got {priv.gamma_n}")
    if not priv.c_prime > 0:
        raise ConfigError(f"privacy.c_prime: must be positive, got {priv.c_prime}")
    if not 0 < priv.lam < 1:
        raise ConfigError(f"privacy.lambda: must lie in (0, 1), got {priv.lam}")
    if priv.sensitivity not in ("estimated", "real"):
        raise ConfigError(f"privacy.sensitivity: expected estimated or real, got {priv.sensitivity!r}")

    if proto.sync_interval < 0:
        raise ConfigError(f"protocol.sync_interval: must be >= 0, got {proto.sync_interval}")
    if proto.sync_reset_mode not in ("zeroed", "conservative"):
        raise ConfigError(f"protocol.sync_reset_mode: expected zeroed or conservative, got {proto.sync_reset_mode!r}")

    for key in ("gamma_l", "clip_threshold"):
        if not getattr(opt, key) > 0:
            raise ConfigError(f"optimizer.{key}: must be positive")
    if not opt.gamma_s >= 0:
        raise ConfigError("optimizer.gamma_s: must be >= 0")
    for key in ("rounds", "batch_size", "metrics_interval", "eval_batch_size"):
        if getattr(opt, key) < 1:
            raise ConfigError(f"optimizer.{key}: must be positive")
    if opt.epochs < 0:
        raise ConfigError("optimizer.epochs: must be >= 0")

    if part.scheme not in ("share_first_k", "share_all", "custom"):
        raise ConfigError(f"partition.scheme: unknown scheme {part.scheme!r}")
    if part.scheme == "share_first_k" and not 1 <= part.k <= 3:
        raise ConfigError(f"partition.k: need 1 <= k <= 3 for the three-layer MLP, got {part.k}")
    if part.scheme == "custom":
        if len(part.tags) != 3 or set(part.tags) - {"shared", "local"}:
            raise ConfigError(f"partition.tags: need three of shared/local, got {part.tags}")
        if "shared" not in part.tags:
            raise ConfigError("partition.tags: at least one block must be shared")

    if task.kind not in ("synthetic", "mnist"):
        raise ConfigError(f"task.kind: expected synthetic or mnist, got {task.kind!r}")
    if task.init not in ("independent", "identical"):
        raise ConfigError(f"task.init: expected independent or identical, got {task.init!r}")
    if task.kind == "synthetic":
        if task.n_classes < 2 or task.n_classes > task.n_features:
            raise ConfigError(f"task.n_classes: need 2 <= n_classes <= n_features, got {task.n_classes}")
        if task.n_examples < top.n_nodes:
            raise ConfigError("task.n_examples: fewer examples than nodes")
        if task.n_test < 1:
            raise ConfigError("task.n_test: must be positive")
        if task.hidden < 1:
            raise ConfigError("task.hidden: must be positive")
    else:
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not getattr(task, key):
                raise ConfigError(f"task.{key}: required for mnist")

    if priv.enabled and not priv.gamma_n < opt.gamma_s / 2:
        warnings.warn(
            f"privacy.gamma_n={priv.gamma_n} violates the step-size condition gamma_n < gamma_s/2 "
            f"(gamma_s={opt.gamma_s}); convergence guarantees do not apply",
            stacklevel=2,
        )

"""Run configuration: one TOML file, strict validation, CLI overrides.

The effective configuration (defaults merged with the file and any
``--set section.key=value`` overrides) is echoed as TOML into every output
directory so runs stay auditable.  Unknown keys anywhere are rejected with
their dotted path; silent typo absorption is how experiments die.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib  # Python 3.11+
except ModuleNotFoundError:  # pragma: no cover - environment-dependent
    import tomli as tomllib

from .audiofeat import MfccParams
from .metrics import JointLimit, JointLimitTable, default_limit_table
from .model import ModelConfig

ENV_CONFIG = "DANCESYNTH_CONFIG"


@dataclass
class DataSettings:
    hp_lambda: float = 1.0  # trend-filter smoothing weight


@dataclass
class TrainSettings:
    epochs: int = 400
    checkpoint_every: int = 50
    split_ratio: float = 0.8


@dataclass
class MetricsSettings:
    beat_tolerance: int = 2
    chunk_frames: int = 120
    pair_count: int = 1000
    takes: int = 5
    limits: JointLimitTable = field(default_factory=default_limit_table)


@dataclass
class RunConfig:
    seed: int = 0
    paths: dict = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    audio: MfccParams = field(default_factory=MfccParams)
    data: DataSettings = field(default_factory=DataSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)

    def effective_dict(self) -> dict:
        limits = {
            name: [lim.min_deg, lim.max_deg, lim.max_speed]
            for name, lim in sorted(self.metrics.limits.limits.items())
        }
        return {
            "seed": self.seed,
            "paths": dict(sorted(self.paths.items())),
            "model": self.model.to_dict(),
            "audio": self.audio.to_dict(),
            "data": {"hp_lambda": self.data.hp_lambda},
            "train": {
                "epochs": self.train.epochs,
                "checkpoint_every": self.train.checkpoint_every,
                "split_ratio": self.train.split_ratio,
            },
            "metrics": {
                "beat_tolerance": self.metrics.beat_tolerance,
                "chunk_frames": self.metrics.chunk_frames,
                "pair_count": self.metrics.pair_count,
                "takes": self.metrics.takes,
                "limits": limits,
            },
        }

    def write_toml(self, path) -> None:
        Path(path).write_text(dump_toml(self.effective_dict()))


class ConfigError(ValueError):
    pass


def _defaults_dict() -> dict:
    return RunConfig().effective_dict()


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        dotted = f"{path}{key}"
        if key not in base:
            # limits is an open table keyed by joint name
            if path == "metrics.limits.":
                out[key] = value
                continue
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, dotted + ".")
        else:
            out[key] = value
    return out


def _apply_override(tree: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override must look like section.key=value: {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override inside scalar: {dotted}")
    node[keys[-1]] = value


def load_config(path=None, overrides: list[str] | None = None,
                seed: int | None = None) -> RunConfig:
    """Defaults <- TOML file <- --set overrides <- --seed flag."""
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    file_tree: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            file_tree = tomllib.load(fh)
    for assignment in overrides or []:
        _apply_override(file_tree, assignment)
    merged = _merge(_defaults_dict(), file_tree)
    if seed is not None:
        merged["seed"] = seed
    return _build(merged)


def _build(tree: dict) -> RunConfig:
    limits_tree = tree["metrics"]["limits"]
    limits = {}
    for name, triple in limits_tree.items():
        if not (isinstance(triple, list) and len(triple) == 3):
            raise ConfigError(
                f"metrics.limits.{name} must be [min_deg, max_deg, max_speed]"
            )
        limits[name] = JointLimit(*[float(v) for v in triple])
    return RunConfig(
        seed=int(tree["seed"]),
        paths=dict(tree["paths"]),
        model=ModelConfig.from_dict(tree["model"]),
        audio=MfccParams.from_dict(tree["audio"]),
        data=DataSettings(hp_lambda=float(tree["data"]["hp_lambda"])),
        train=TrainSettings(
            epochs=int(tree["train"]["epochs"]),
            checkpoint_every=int(tree["train"]["checkpoint_every"]),
            split_ratio=float(tree["train"]["split_ratio"]),
        ),
        metrics=MetricsSettings(
            beat_tolerance=int(tree["metrics"]["beat_tolerance"]),
            chunk_frames=int(tree["metrics"]["chunk_frames"]),
            pair_count=int(tree["metrics"]["pair_count"]),
            takes=int(tree["metrics"]["takes"]),
            limits=JointLimitTable(limits),
        ),
    )


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value {value!r}")


def dump_toml(tree: dict, prefix: str = "") -> str:
    """Minimal TOML emitter for the nested-dict config shape."""
    lines: list[str] = []
    tables: list[tuple[str, dict]] = []
    for key, value in tree.items():
        if isinstance(value, dict):
            tables.append((key, value))
        else:
            lines.append(f"{key} = {_toml_scalar(value)}")
    text = "\n".join(lines)
    for key, value in tables:
        name = f"{prefix}{key}"
        body = dump_toml(value, prefix=name + ".")
        text += f"\n\n[{name}]\n{body}" if body else f"\n\n[{name}]"
    return text.strip() + ("\n" if not prefix else "")

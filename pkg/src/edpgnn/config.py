"""Flat text configuration: one [section] per module, key = value lines.

The same structure round-trips through render/parse, drives every CLI
command, and is copied into each output directory for provenance. Unknown
sections or keys are rejected with the list of valid ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import get_type_hints

from .graphs import DEFAULT_SIGMAS


@dataclass
class RunSection:
    seed: int = 0
    out: str = "runs/out"
    workers: int = 1


@dataclass
class DatasetSection:
    kind: str = "community_small"
    count: int = 100
    n: int = 10
    n_min: int = 12
    n_max: int = 20
    p: float = 0.7
    weighted: bool = False
    path: str = ""
    host_n: int = 400
    host_attach: int = 2


@dataclass
class ModelSection:
    layers: int = 5
    msg_steps: int = 4
    channels: int = 4
    hidden: int = 16
    node_width: int = 16
    learnable_adj: bool = True
    multi_channel: bool = True


@dataclass
class ScheduleSection:
    sigmas: tuple[float, ...] = DEFAULT_SIGMAS


@dataclass
class TrainSection:
    lr: float = 1e-3
    batch_size: int = 8
    steps: int = 5000
    val_size: int = 32
    checkpoint_every: int = 250


@dataclass
class SamplerSection:
    eps_step: float = 1e-3
    eps_s: float = 0.3
    steps_per_level: int = 1000


@dataclass
class TaskSection:
    name: str = "sp_weighted"
    variant: str = "edpgnn"
    budget: int = 5000
    batch_size: int = 8
    lr: float = 1e-3
    test_size: int = 256


@dataclass
class EvalSection:
    bandwidth: float = 1.0


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    train: TrainSection = field(default_factory=TrainSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    task: TaskSection = field(default_factory=TaskSection)
    eval: EvalSection = field(default_factory=EvalSection)


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


class ConfigError(ValueError):
    pass


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(f"{v:.17g}" for v in value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _parse_value(raw: str, target_type, section: str, key: str):
    raw = raw.strip()
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is str:
            return raw
        if target_type == tuple[float, ...]:
            return tuple(float(tok) for tok in raw.split())
    except ValueError:
        raise ConfigError(
            f"bad value {raw!r} for {section}.{key} (expected {getattr(target_type, '__name__', target_type)})"
        ) from None
    raise AssertionError(f"unhandled config type {target_type}")


def render_config(cfg: RunConfig) -> str:
    lines = []
    for section_field in fields(RunConfig):
        section = getattr(cfg, section_field.name)
        lines.append(f"[{section_field.name}]")
        for f in fields(section):
            lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    current_name: str | None = None
    current = None
    hints = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current_name = line[1:-1].strip()
            if current_name not in _SECTIONS:
                raise ConfigError(
                    f"line {lineno}: unknown section [{current_name}]; "
                    f"valid sections: {', '.join(_SECTIONS)}"
                )
            current = getattr(cfg, current_name)
            hints = get_type_hints(type(current))
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside of any [section]")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in hints:
            valid = ", ".join(f.name for f in fields(current))
            raise ConfigError(
                f"line {lineno}: unknown key {key!r} in [{current_name}]; "
                f"valid keys: {valid}"
            )
        setattr(current, key, _parse_value(raw_value, hints[key], current_name, key))
    return cfg


def apply_override(cfg: RunConfig, spec: str) -> None:
    """Apply one --set override of the form section.key=value."""
    if "=" not in spec or "." not in spec.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got {spec!r}")
    dotted, raw_value = spec.split("=", 1)
    section_name, key = dotted.split(".", 1)
    section_name = section_name.strip()
    key = key.strip()
    if section_name not in _SECTIONS:
        raise ConfigError(
            f"unknown section {section_name!r}; valid sections: {', '.join(_SECTIONS)}"
        )
    section = getattr(cfg, section_name)
    hints = get_type_hints(type(section))
    if key not in hints:
        valid = ", ".join(f.name for f in fields(section))
        raise ConfigError(
            f"unknown key {key!r} in [{section_name}]; valid keys: {valid}"
        )
    setattr(section, key, _parse_value(raw_value, hints[key], section_name, key))

"""Run configuration: JSON file plus flag overrides, strictly validated.

The resolved configuration is echoed into every run manifest so a run can
be replayed from its manifest alone. Unknown keys are rejected by name
rather than ignored; a typo that silently falls back to a default would
invalidate a whole experiment.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .comparator import Activation, ComparatorConfig, SharingMode
from .synth import SynthConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSection:
    dim: int = 64
    identity_dims: int = 32
    n_train_families: int = 900
    n_val_families: int = 90
    n_test_families: int = 90
    children_choices: tuple[int, ...] = (3, 4)
    heritability: float = 1.414
    gender_weight: float = 0.45
    noise_weight: float = 0.33
    founder_scale: float = 3.0
    expression_flip_fraction: float = 0.55
    parent_blend: str = "mean"


@dataclass(frozen=True)
class ModelSection:
    hidden: int = 192
    activation: str = "lrelu"
    dropout: float = 0.2
    sharing: str = "per-expert"


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 4
    batch_size: int = 200
    lr_initial: float = 0.001
    lr_late: float = 0.0005
    lr_switch_after_epoch: int = 2
    l2_lambda: float = 2e-4
    l2_includes_biases: bool = True


@dataclass(frozen=True)
class EvalSection:
    objective: str = "macro"
    bins: int = 50


@dataclass(frozen=True)
class RunConfig:
    seed: int = 4
    synth: SynthSection = field(default_factory=SynthSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def synth_config(self) -> SynthConfig:
        s = self.synth
        return SynthConfig(
            dim=s.dim,
            identity_dims=s.identity_dims,
            n_train_families=s.n_train_families,
            n_val_families=s.n_val_families,
            n_test_families=s.n_test_families,
            children_choices=tuple(s.children_choices),
            heritability=s.heritability,
            gender_weight=s.gender_weight,
            noise_weight=s.noise_weight,
            founder_scale=s.founder_scale,
            expression_flip_fraction=s.expression_flip_fraction,
            parent_blend=s.parent_blend,
            seed=self.seed,
        )

    def comparator_config(self, input_dim: int) -> ComparatorConfig:
        m = self.model
        try:
            activation = Activation(m.activation)
            sharing = SharingMode(m.sharing)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return ComparatorConfig(
            input_dim=input_dim,
            hidden=m.hidden,
            activation=activation,
            dropout_p=m.dropout,
            sharing=sharing,
        )

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            epochs=t.epochs,
            batch_size=t.batch_size,
            lr_initial=t.lr_initial,
            lr_late=t.lr_late,
            lr_switch_after_epoch=t.lr_switch_after_epoch,
            l2_lambda=t.l2_lambda,
            l2_includes_biases=t.l2_includes_biases,
            seed=self.seed,
        )

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["synth"]["children_choices"] = list(self.synth.children_choices)
        return out


_SECTIONS = {"synth": SynthSection, "model": ModelSection, "train": TrainSection, "eval": EvalSection}


def _coerce(value: Any, target_type: Any, key: str) -> Any:
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key '{key}' must be an integer, got {value!r}")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{key}' must be a number, got {value!r}")
        return float(value)
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"config key '{key}' must be a boolean, got {value!r}")
        return value
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"config key '{key}' must be a string, got {value!r}")
        return value
    # tuple[int, ...]
    if isinstance(value, (list, tuple)) and all(
        isinstance(v, int) and not isinstance(v, bool) for v in value
    ):
        return tuple(value)
    raise ConfigError(f"config key '{key}' must be a list of integers, got {value!r}")


def _build_section(cls: type, data: dict[str, Any], prefix: str) -> Any:
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key '{prefix}{key}'")
        target = known[key].type
        type_map = {"int": int, "float": float, "bool": bool, "str": str}
        target_type = type_map.get(target, tuple)
        kwargs[key] = _coerce(value, target_type, f"{prefix}{key}")
    return cls(**kwargs)


def parse_config(
    path: str | Path | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Load a JSON run config and apply dotted-key flag overrides on top."""
    data: dict[str, Any] = {}
    if path is not None:
        raw = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, sub = key.split(".", 1)
            data.setdefault(section, {})
            if not isinstance(data[section], dict):
                raise ConfigError(f"config key '{section}' must be an object")
            data[section][sub] = value
        else:
            data[key] = value

    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key == "seed":
            kwargs["seed"] = _coerce(value, int, "seed")
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{key}' must be an object")
            kwargs[key] = _build_section(_SECTIONS[key], value, f"{key}.")
        else:
            raise ConfigError(f"unknown config key '{key}'")
    return RunConfig(**kwargs)


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return f"sha256:{digest}"


def write_manifest(
    out_dir: str | Path,
    command: str,
    config: RunConfig,
    artifacts: list[str | Path],
    name: str = "manifest.json",
) -> Path:
    """Record the resolved config, seed and artifact checksums for a run."""
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "seed": config.seed,
        "config": config.to_dict(),
        "artifacts": {Path(p).name: sha256_file(p) for p in artifacts},
    }
    path = out_dir / name
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path

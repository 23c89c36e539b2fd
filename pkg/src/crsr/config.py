"""Flat YAML experiment configuration with strict key checking.

Every omitted key falls back to the shipped default; unknown keys are
rejected by name so typos never silently change an experiment. Referenced
input directories must exist at parse time. The environment variable
``CRSR_OUTPUT_ROOT`` re-roots a relative ``output_dir``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError, ShapeError
from .imaging import DegradationConfig
from .losses import LossWeights
from .networks import NetworkConfig
from .training import Ablation, TrainingSchedule

OUTPUT_ROOT_ENV = "CRSR_OUTPUT_ROOT"


@dataclass(frozen=True)
class ExperimentConfig:
    hr_dir: Path | None = None
    genuine_lr_dir: Path | None = None
    degrade_from_hr: bool = False
    output_dir: Path = Path("runs/experiment")
    network: NetworkConfig = field(default_factory=NetworkConfig)
    schedule: TrainingSchedule = field(default_factory=TrainingSchedule)
    weights: LossWeights = field(default_factory=LossWeights)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)


def _int_value(key: str, value, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    return value


def _float_value(key: str, value, minimum: float | None = None, strict: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{key} must be finite, got {value}")
    if minimum is not None and (value < minimum or (strict and value == minimum)):
        raise ConfigError(f"{key} must be {'>' if strict else '>='} {minimum}, got {value}")
    return value


def _bool_value(key: str, value) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{key} must be true or false, got {value!r}")
    return value


def _str_value(key: str, value) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{key} must be a nonempty string, got {value!r}")
    return value


def _ratio_value(key: str, value) -> tuple[int, int]:
    if isinstance(value, str):
        parts = value.split(":")
        if len(parts) != 2:
            raise ConfigError(f"{key} must look like '1:1', got {value!r}")
        try:
            pair = (int(parts[0]), int(parts[1]))
        except ValueError as exc:
            raise ConfigError(f"{key} must look like '1:1', got {value!r}") from exc
    elif isinstance(value, (list, tuple)) and len(value) == 2:
        pair = (_int_value(key, value[0]), _int_value(key, value[1]))
    else:
        raise ConfigError(f"{key} must look like '1:1', got {value!r}")
    if pair[0] < 1 or pair[1] < 1:
        raise ConfigError(f"{key} parts must be >= 1, got {value!r}")
    return pair


def _ablation_value(key: str, value) -> frozenset[Ablation]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{key} must be a list of flag names, got {value!r}")
    flags = set()
    for item in value:
        try:
            flags.add(Ablation(str(item).lower()))
        except ValueError as exc:
            known = sorted(a.value for a in Ablation)
            raise ConfigError(f"{key} entry {item!r} is not one of {known}") from exc
    return frozenset(flags)


def _group_blocks_value(key: str, value) -> tuple[int, ...]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{key} must be a nonempty list of integers, got {value!r}")
    return tuple(_int_value(key, v, 1) for v in value)


def _existing_dir(key: str, value) -> Path:
    p = Path(_str_value(key, value))
    if not p.is_dir():
        raise ConfigError(f"{key} does not exist or is not a directory: {p}")
    return p


_PATH_KEYS = {"hr_dir", "genuine_lr_dir", "output_dir", "degrade_from_hr"}
_NETWORK_KEYS = {
    "base_channels",
    "cr_res_blocks",
    "sr_group_blocks",
    "disc_res_blocks",
    "feat_disc_fc_layers",
    "embed_dim",
    "sr_image_gan",
}
_SCHEDULE_KEYS = {
    "lr",
    "batch_size",
    "epochs_sr",
    "epochs_cc",
    "epochs_joint",
    "seed",
    "paired_unpaired_ratio",
    "ablation",
}
_WEIGHT_KEYS = {"lambda_inner", "lambda_cr", "lambda_cr_sr", "lambda_cr_gan"}
_DEGRADE_KEYS = {
    "blur_sigma_min",
    "blur_sigma_max",
    "noise_sigma_min",
    "noise_sigma_max",
    "quality_min",
    "quality_max",
    "degradation_seed",
}
KNOWN_KEYS = _PATH_KEYS | _NETWORK_KEYS | _SCHEDULE_KEYS | _WEIGHT_KEYS | _DEGRADE_KEYS


def parse_config(path) -> ExperimentConfig:
    """Read and validate a flat YAML config file."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    raw = yaml.safe_load(p.read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of keys to values")
    for key in raw:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key '{key}'")

    defaults = ExperimentConfig()

    def get(key, default):
        return raw.get(key, default)

    network_kwargs = dict(
        base_channels=_int_value("base_channels", get("base_channels", 32), 1),
        cr_res_blocks=_int_value("cr_res_blocks", get("cr_res_blocks", 3), 1),
        sr_group_blocks=_group_blocks_value("sr_group_blocks", get("sr_group_blocks", [12, 3, 2])),
        disc_res_blocks=_int_value("disc_res_blocks", get("disc_res_blocks", 6), 1),
        feat_disc_fc_layers=_int_value("feat_disc_fc_layers", get("feat_disc_fc_layers", 5), 1),
        embed_dim=_int_value("embed_dim", get("embed_dim", 128), 1),
        sr_image_gan=_bool_value("sr_image_gan", get("sr_image_gan", False)),
    )
    schedule_kwargs = dict(
        lr=_float_value("lr", get("lr", 1e-4), 0.0, strict=True),
        batch_size=_int_value("batch_size", get("batch_size", 16), 1),
        epochs_sr=_int_value("epochs_sr", get("epochs_sr", 100), 0),
        epochs_cc=_int_value("epochs_cc", get("epochs_cc", 130), 0),
        epochs_joint=_int_value("epochs_joint", get("epochs_joint", 10), 0),
        seed=_int_value("seed", get("seed", 0)),
        paired_unpaired_ratio=_ratio_value(
            "paired_unpaired_ratio", get("paired_unpaired_ratio", "1:1")
        ),
        ablation=_ablation_value("ablation", get("ablation", [])),
    )
    weight_kwargs = dict(
        lambda_inner=_float_value("lambda_inner", get("lambda_inner", 0.2), 0.0),
        lambda_cr=_float_value("lambda_cr", get("lambda_cr", 0.06), 0.0),
        lambda_cr_sr=_float_value("lambda_cr_sr", get("lambda_cr_sr", 0.01), 0.0),
        lambda_cr_gan=_float_value("lambda_cr_gan", get("lambda_cr_gan", 0.03), 0.0),
    )
    degradation_kwargs = dict(
        blur_sigma_range=(
            _float_value("blur_sigma_min", get("blur_sigma_min", 0.5), 0.0),
            _float_value("blur_sigma_max", get("blur_sigma_max", 2.5), 0.0),
        ),
        noise_sigma_range=(
            _float_value("noise_sigma_min", get("noise_sigma_min", 0.01), 0.0),
            _float_value("noise_sigma_max", get("noise_sigma_max", 0.05), 0.0),
        ),
        compression_quality_range=(
            _int_value("quality_min", get("quality_min", 30), 1),
            _int_value("quality_max", get("quality_max", 70), 1),
        ),
        seed=_int_value("degradation_seed", get("degradation_seed", 0)),
    )

    try:
        network = NetworkConfig(**network_kwargs)
        schedule = TrainingSchedule(**schedule_kwargs)
        weights = LossWeights(**weight_kwargs)
        degradation = DegradationConfig(**degradation_kwargs)
    except (ShapeError, ConfigError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    hr_dir = _existing_dir("hr_dir", raw["hr_dir"]) if "hr_dir" in raw else None
    genuine_lr_dir = (
        _existing_dir("genuine_lr_dir", raw["genuine_lr_dir"]) if "genuine_lr_dir" in raw else None
    )
    output_dir = Path(_str_value("output_dir", get("output_dir", str(defaults.output_dir))))
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not output_dir.is_absolute():
        output_dir = Path(root) / output_dir

    return ExperimentConfig(
        hr_dir=hr_dir,
        genuine_lr_dir=genuine_lr_dir,
        degrade_from_hr=_bool_value("degrade_from_hr", get("degrade_from_hr", False)),
        output_dir=output_dir,
        network=network,
        schedule=schedule,
        weights=weights,
        degradation=degradation,
    )

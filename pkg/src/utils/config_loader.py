"""
Configuration loader for the MDC segmentation pipeline.

The run configuration is a flat YAML mapping (one ``key: value`` per line).
Every key has a typed default below; unknown keys are rejected.
"""

import copy
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv


class ConfigValidationError(Exception):
    """Raised when configuration validation fails."""
    pass


DEFAULT_CONFIG: Dict[str, Any] = {
    # run
    "seed": 0,
    "output_root": "runs",
    "num_workers": 1,
    # synthetic data
    "data_dir": "data/synthetic",
    "num_classes": 5,
    "class_names": ["disk", "square", "triangle", "ring", "cross"],
    "image_size": 64,
    "weak_count": 2000,
    "strong_count": 400,
    "val_count": 200,
    "shapes_min": 1,
    "shapes_max": 3,
    "scale_min": 0.30,
    "scale_max": 0.60,
    "clutter_amplitude": 0.08,
    "saliency_noise": 0.0,
    "saliency_falloff": 4.0,
    # classifier
    "backbone": ["conv3x3:16", "relu", "pool2", "conv3x3:32", "relu", "pool2",
                 "conv3x3:32", "relu", "conv3x3:64", "relu"],
    "block_dilations": [1, 3, 6, 9],
    "block_channels": 32,
    "block_depth": 1,
    "cls_epochs": 15,
    "cls_lr": 0.01,
    "cls_lr_decay_epoch": 6,
    "cls_batch": 16,
    "cls_crop": 64,
    # optimizer (inherited defaults, not stated by the method)
    "momentum": 0.9,
    "weight_decay": 0.0005,
    # localization and pseudo masks
    "fg_fraction": 0.30,
    "fg_threshold_rule": "top_range",
    "bg_threshold": 0.06,
    "fusion_mode": "mdc",
    "mask_source": "fused",
    # segmentation
    "seg_backbone": ["conv3x3:16", "relu", "pool2", "conv3x3:32", "relu", "pool2",
                     "conv3x3:32", "relu", "conv3x3:64", "relu"],
    "seg_mode": "weak",
    "seg_epochs": 15,
    "seg_lr": 0.01,
    "seg_lr_decay_epoch": 6,
    "seg_batch": 16,
    "seg_crop": 64,
    "online_mask_floor": None,
    # ablation
    "ablate_train_seg": True,
    "ablate_strong_fractions": [0.05, 0.10, 0.20],
}

_FRACTION_KEYS = ("fg_fraction", "scale_min", "scale_max")
_POSITIVE_INT_KEYS = ("num_classes", "image_size", "shapes_min", "shapes_max", "block_channels",
                      "block_depth", "cls_epochs", "cls_lr_decay_epoch", "cls_batch", "cls_crop",
                      "seg_epochs", "seg_lr_decay_epoch", "seg_batch", "seg_crop", "num_workers")
_COUNT_KEYS = ("weak_count", "strong_count", "val_count")
_CHOICES = {
    "fg_threshold_rule": ("top_range", "fraction"),
    "fusion_mode": ("mdc", "mean_all"),
    "seg_mode": ("weak", "semi"),
}


def load_config(config_path: Optional[str] = "config/mdc.yaml",
                overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Load configuration from a YAML file layered over the defaults.

    Args:
        config_path: Path to the flat YAML config; None uses defaults only
        overrides: Values applied last (e.g. ``--seed`` from the command line)

    Returns:
        Fully-resolved configuration dictionary

    Raises:
        ConfigValidationError: If configuration is invalid
        FileNotFoundError: If config file doesn't exist
    """
    load_dotenv()

    config = copy.deepcopy(DEFAULT_CONFIG)

    if config_path is not None:
        config_file = Path(config_path)
        if not config_file.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_path}")

        with open(config_file, 'r') as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigValidationError(f"Configuration must be a flat mapping: {config_path}")

        _reject_unknown_keys(loaded)
        config.update(_substitute_env_vars(loaded))

    if overrides:
        _reject_unknown_keys(overrides)
        config.update({k: v for k, v in overrides.items() if v is not None})

    _validate_config(config)
    return config


def dump_config(config: Dict[str, Any], path: Path) -> None:
    """Write the resolved configuration (sorted keys, deterministic)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        yaml.safe_dump(config, f, sort_keys=True, default_flow_style=None)


def _reject_unknown_keys(values: Dict[str, Any]) -> None:
    unknown = sorted(set(values) - set(DEFAULT_CONFIG))
    if unknown:
        raise ConfigValidationError(f"Unknown config keys: {', '.join(unknown)}")


def _substitute_env_vars(config: Any) -> Any:
    """Recursively substitute ${ENV_VAR} references in config values."""
    if isinstance(config, dict):
        return {k: _substitute_env_vars(v) for k, v in config.items()}
    elif isinstance(config, list):
        return [_substitute_env_vars(item) for item in config]
    elif isinstance(config, str) and config.startswith("${") and config.endswith("}"):
        env_var = config[2:-1]
        return os.getenv(env_var, config)
    else:
        return config


def _validate_config(config: Dict[str, Any]) -> None:
    """Validate types and ranges of the resolved configuration."""
    for key, default in DEFAULT_CONFIG.items():
        value = config[key]
        if default is None or value is None:
            continue
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigValidationError(f"{key} must be a boolean, got {value!r}")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigValidationError(f"{key} must be an integer, got {value!r}")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigValidationError(f"{key} must be a number, got {value!r}")
            config[key] = float(value)
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigValidationError(f"{key} must be a list, got {value!r}")
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigValidationError(f"{key} must be a string, got {value!r}")

    for key in _POSITIVE_INT_KEYS:
        if config[key] < 1:
            raise ConfigValidationError(f"{key} must be >= 1")
    for key in _COUNT_KEYS:
        if config[key] < 0:
            raise ConfigValidationError(f"{key} must be >= 0")
    for key in _FRACTION_KEYS:
        if not 0.0 < config[key] < 1.0:
            raise ConfigValidationError(f"{key} must lie in (0, 1)")
    for key, choices in _CHOICES.items():
        if config[key] not in choices:
            raise ConfigValidationError(f"{key} must be one of {choices}, got {config[key]!r}")

    if config["scale_min"] > config["scale_max"]:
        raise ConfigValidationError("scale_min must not exceed scale_max")
    if config["shapes_min"] > config["shapes_max"]:
        raise ConfigValidationError("shapes_min must not exceed shapes_max")
    if not 0.0 <= config["saliency_noise"] < 1.0:
        raise ConfigValidationError("saliency_noise must lie in [0, 1)")
    if not 0.0 <= config["bg_threshold"] <= 1.0:
        raise ConfigValidationError("bg_threshold must lie in [0, 1]")

    dilations = config["block_dilations"]
    if len(dilations) < 2 or dilations[0] != 1 or any(int(d) < 1 for d in dilations):
        raise ConfigValidationError("block_dilations must start with 1, hold at least one dilated rate, all >= 1")

    if len(config["class_names"]) < config["num_classes"]:
        raise ConfigValidationError("class_names must name every class")

    for key in ("cls_lr", "seg_lr", "momentum", "weight_decay"):
        if config[key] < 0:
            raise ConfigValidationError(f"{key} must be >= 0")

    floor = config["online_mask_floor"]
    if floor is not None and not 0.0 < float(floor) < 1.0:
        raise ConfigValidationError("online_mask_floor must be null or lie in (0, 1)")

    source = config["mask_source"]
    if source not in ("fused", "mean_all") and not (source.startswith("block:") and source[6:].isdigit()):
        raise ConfigValidationError("mask_source must be 'fused', 'mean_all' or 'block:<index>'")

    for fraction in config["ablate_strong_fractions"]:
        if not 0.0 < float(fraction) <= 1.0:
            raise ConfigValidationError("ablate_strong_fractions entries must lie in (0, 1]")

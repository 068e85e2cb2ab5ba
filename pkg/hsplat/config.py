import logging
import os
from typing import Any, Dict, Mapping, Optional

import yaml

from hsplat.defaults import (
    DEFAULT_DENSIFY_UNTIL,
    DEFAULT_ITERATIONS,
    DEFAULT_LAMBDA_DSSIM,
    DEFAULT_LOG_INTERVAL,
    DEFAULT_SEED,
    DEFAULT_SH_DEGREE,
    DEFAULT_THREADS,
)
from hsplat.errors import ConfigError
from hsplat.services.densify import DensifyConfig
from hsplat.services.optimizer import LearningRates
from hsplat.services.trainer import TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = "config/default.yaml"

DENSIFY_KEYS = (
    "tau_p",
    "tau_s",
    "strategy",
    "split_count",
    "split_scale_divisor",
    "prune_opacity",
    "densify_interval",
    "densify_from",
    "densify_until",
    "opacity_reset_interval",
    "size_guards",
    "max_screen_fraction",
    "max_world_fraction",
)
LR_KEYS = {
    "position_lr_init": "positions_init",
    "position_lr_final": "positions_final",
    "position_lr_delay_mult": "positions_delay_mult",
    "position_lr_delay_steps": "positions_delay_steps",
    "scaling_lr": "log_scales",
    "rotation_lr": "rotations",
    "opacity_lr": "opacity_logits",
    "feature_lr": "color_coeffs",
}
TRAIN_KEYS = (
    "iterations",
    "loss_lambda_dssim",
    "regime",
    "seed",
    "log_interval",
    "checkpoint_interval",
    "threads",
    "background",
    "random_background",
    "per_channel_abs",
    "gradient_space",
)
RUN_KEYS = ("densify", "out", "sh_degree", "n_init", "jobs", "holdout_every")
KNOWN_KEYS = set(DENSIFY_KEYS) | set(LR_KEYS) | set(TRAIN_KEYS) | set(RUN_KEYS)
BOOL_KEYS = ("size_guards", "random_background", "per_channel_abs", "densify")
INT_KEYS = (
    "split_count",
    "densify_interval",
    "densify_from",
    "densify_until",
    "opacity_reset_interval",
    "position_lr_delay_steps",
    "iterations",
    "seed",
    "checkpoint_interval",
)


def get_repo_root() -> str:
    """Find repository root by walking up until README.md or .git is found."""
    current_dir = os.path.dirname(os.path.abspath(__file__))
    while current_dir != os.path.dirname(current_dir):
        if any(os.path.exists(os.path.join(current_dir, marker)) for marker in [".git", "README.md"]):
            return current_dir
        current_dir = os.path.dirname(current_dir)
    return os.getcwd()


def _coerce_int(value: Any, default: int, *, minimum: int = None) -> int:
    try:
        if value is None or value == "":
            number = int(default)
        else:
            number = int(value)
    except (TypeError, ValueError):
        number = int(default)
    if minimum is not None:
        number = max(int(minimum), number)
    return number


def _coerce_bool(value: Any, default: bool) -> bool:
    if value is None:
        return bool(default)
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return bool(value)
    candidate = str(value).strip().lower()
    if candidate in {"1", "true", "yes", "on"}:
        return True
    if candidate in {"0", "false", "no", "off"}:
        return False
    return bool(default)


def _coerce_float(value: Any, default: float, *, minimum: float = None, maximum: float = None) -> float:
    try:
        if value is None or value == "":
            number = float(default)
        else:
            number = float(value)
    except (TypeError, ValueError):
        number = float(default)
    if minimum is not None:
        number = max(float(minimum), number)
    if maximum is not None:
        number = min(float(maximum), number)
    return float(number)


def _strict_number(key: str, value: Any, kind=float):
    """Parse a value that has no fallback; failure is a ``ConfigError``."""
    try:
        if isinstance(value, bool):
            raise ValueError(value)
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from exc


def load_config_file(config_path: Optional[str], *, required: bool = False) -> Dict[str, Any]:
    """Read a flat YAML mapping; parse errors carry ``path:line``."""
    if not config_path:
        return {}

    # Relative paths are tried against the repo root first
    if not os.path.isabs(config_path):
        candidate = os.path.join(get_repo_root(), config_path)
        if os.path.exists(candidate):
            config_path = candidate

    if not os.path.exists(config_path):
        if required:
            raise ConfigError(f"config file not found: {config_path}")
        return {}

    with open(config_path, "r") as file:
        try:
            data = yaml.safe_load(file) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else 1
            problem = getattr(exc, "problem", None) or str(exc)
            raise ConfigError(f"{config_path}:{line}: {problem}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{config_path}:1: top level must be a mapping")
    unknown = sorted(set(data) - KNOWN_KEYS)
    if unknown:
        logger.warning("Ignoring unknown config keys in %s: %s", config_path, ", ".join(unknown))
    return data


def merge_settings(file_values: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Overrides win; ``None`` in overrides means the flag was not given."""
    merged = {key: value for key, value in file_values.items() if key in KNOWN_KEYS}
    merged.update({key: value for key, value in overrides.items() if value is not None})
    return merged


def parse_background(value: Any):
    if value is None:
        return (0.0, 0.0, 0.0)
    if isinstance(value, (int, float)):
        value = [value] * 3
    if isinstance(value, str):
        value = [part for part in value.replace(",", " ").split() if part]
    if len(value) != 3:
        raise ConfigError(f"background must have 3 components, got {value!r}")
    return tuple(_coerce_float(part, 0.0, minimum=0.0, maximum=1.0) for part in value)


def build_train_config(
    file_values: Mapping[str, Any],
    overrides: Optional[Mapping[str, Any]] = None,
    *,
    regime: Optional[str] = None,
) -> TrainConfig:
    """Merge file values with CLI overrides into a validated ``TrainConfig``.

    A ``densify_until`` coming from the file is clamped to ``iterations`` so
    short runs work with the stock config; one given as an override is not.
    """
    overrides = overrides or {}
    settings = merge_settings(file_values, overrides)
    if regime is not None:
        settings["regime"] = regime

    for key in INT_KEYS:
        if key in settings:
            settings[key] = _strict_number(key, settings[key], int)
    for key in ("tau_p", "tau_s", "split_scale_divisor", "prune_opacity", "max_screen_fraction", "max_world_fraction", "loss_lambda_dssim"):
        if key in settings:
            settings[key] = _strict_number(key, settings[key], float)

    iterations = settings.get("iterations", DEFAULT_ITERATIONS)
    densify_kwargs = {key: settings[key] for key in DENSIFY_KEYS if key in settings}
    for key in BOOL_KEYS:
        if key in densify_kwargs:
            densify_kwargs[key] = _coerce_bool(densify_kwargs[key], True)
    densify_kwargs["enabled"] = _coerce_bool(settings.get("densify"), True)
    if overrides.get("densify_until") is None:
        until = densify_kwargs.get("densify_until", DEFAULT_DENSIFY_UNTIL)
        if until > iterations:
            logger.info("Clamping densify_until %d to iterations %d", until, iterations)
            densify_kwargs["densify_until"] = iterations
    densify_config = DensifyConfig(**densify_kwargs)

    lr_kwargs = {}
    for key, field_name in LR_KEYS.items():
        if key in settings:
            kind = int if key == "position_lr_delay_steps" else float
            lr_kwargs[field_name] = _strict_number(key, settings[key], kind)

    return TrainConfig(
        iterations=iterations,
        densify=densify_config,
        loss_lambda_dssim=settings.get("loss_lambda_dssim", DEFAULT_LAMBDA_DSSIM),
        lr=LearningRates(**lr_kwargs),
        regime=settings.get("regime", "view3d"),
        seed=settings.get("seed", DEFAULT_SEED),
        log_interval=_coerce_int(settings.get("log_interval"), DEFAULT_LOG_INTERVAL, minimum=1),
        checkpoint_interval=max(0, settings.get("checkpoint_interval", 0)),
        threads=_coerce_int(settings.get("threads"), DEFAULT_THREADS, minimum=1),
        background=parse_background(settings.get("background")),
        random_background=_coerce_bool(settings.get("random_background"), False),
        per_channel_abs=_coerce_bool(settings.get("per_channel_abs"), False),
        gradient_space=str(settings.get("gradient_space", "pixel")),
    )


def run_settings(file_values: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """Non-training keys (output dir, SH degree, init count, jobs) with defaults."""
    settings = merge_settings(file_values, overrides or {})
    out = settings.get("out") or "output"
    return {
        "out": out if os.path.isabs(out) else os.path.join(os.getcwd(), out),
        "sh_degree": _coerce_int(settings.get("sh_degree"), DEFAULT_SH_DEGREE, minimum=0),
        "n_init": _coerce_int(settings.get("n_init"), 0, minimum=0),
        "jobs": _coerce_int(settings.get("jobs"), 1, minimum=1),
        "holdout_every": _coerce_int(settings.get("holdout_every"), 0, minimum=0),
    }

"""Pipeline configuration: defaults, JSON loading and validation.

Precedence is command-line flags > config file > defaults. Defaults carry
the published augmentation and batch constants.
"""
from __future__ import annotations

import json
import secrets
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .augment import AugmentPolicy
from .errors import ConfigError, FormatError
from .geometry import DEFAULT_K, DEFAULT_MIN_ANGLE, MIN_Q
from .phantom import PhantomSpec

PREDICTORS = ("oracle", "noisy-oracle", "patch-softmax")
CENTERS = ("origin", "volume")
DEFAULT_MEMORY_BUDGET = 2**31


@dataclass(frozen=True)
class PipelineConfig:
    volume: str | None = None
    labels: str | None = None
    out: str = "run"
    phantom: PhantomSpec | None = None
    seed: int | None = None
    k: int = DEFAULT_K
    min_angle_deg: float = DEFAULT_MIN_ANGLE
    include_canonical: bool = False
    q: int | None = None
    r: float | None = None
    memory_budget_bytes: int = DEFAULT_MEMORY_BUDGET
    batch_size_min: int = 8
    r_min: float = 0.0
    center: str = "origin"
    preprocess: bool = True
    iqr_fallback: bool = False
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    predictor: str = "oracle"
    model: str | None = None
    flip_rate: float = 0.2
    blur_sigma: float = 0.0
    epochs: int = 20
    learning_rate: float = 0.1
    standardize_features: bool = True
    train_slices_per_view: int = 16
    threads: int = 1
    save_intermediates: bool = True

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["augment"] = self.augment.to_dict()
        d["phantom"] = None if self.phantom is None else self.phantom.to_dict()
        return d

    def with_seed(self) -> "PipelineConfig":
        """Fill in a random seed when none was given, so manifests always carry one."""
        if self.seed is not None:
            return self
        return replace(self, seed=secrets.randbelow(2**31))


_FIELD_NAMES = {f.name for f in fields(PipelineConfig)}


def config_from_dict(d: dict) -> tuple[PipelineConfig | None, list[str]]:
    """Build a config; returns ``(config, problems)`` where problems are parse errors."""
    if "config" in d and isinstance(d["config"], dict):
        d = d["config"]  # a run manifest
    problems = [f"unknown config field {k!r}" for k in d if k not in _FIELD_NAMES]
    kwargs = {k: v for k, v in d.items() if k in _FIELD_NAMES}
    if isinstance(kwargs.get("augment"), dict):
        try:
            kwargs["augment"] = AugmentPolicy.from_dict(kwargs["augment"])
        except TypeError as exc:
            problems.append(f"augment: {exc}")
            kwargs.pop("augment")
    if isinstance(kwargs.get("phantom"), dict):
        try:
            kwargs["phantom"] = PhantomSpec.from_dict(kwargs["phantom"])
        except (TypeError, KeyError, ConfigError) as exc:
            problems.append(f"phantom: {exc}")
            kwargs.pop("phantom")
    try:
        return PipelineConfig(**kwargs), problems
    except TypeError as exc:
        return None, problems + [str(exc)]


def load_config(path) -> tuple[PipelineConfig | None, list[str]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(d)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def validate_config(config: PipelineConfig) -> list[str]:
    """Every violated constraint, as ``"field: reason"`` strings (empty when valid)."""
    problems = []
    for name in ("volume", "labels", "model"):
        path = getattr(config, name)
        if path is not None and not Path(path).exists():
            problems.append(f"{name}: path {path!r} does not exist")
    if config.volume is None and config.labels is not None:
        problems.append("labels: given without a volume")
    if config.volume is not None and config.labels is None and config.model is None:
        problems.append("labels: needed unless a pre-trained patch-softmax model is given")
    if config.model is not None and config.predictor != "patch-softmax":
        problems.append(f"model: only used by the patch-softmax predictor, not {config.predictor!r}")
    if config.seed is not None and (not _is_int(config.seed) or config.seed < 0):
        problems.append(f"seed: must be a non-negative integer, got {config.seed!r}")
    if not _is_int(config.k) or config.k < 1:
        problems.append(f"k: must be a positive integer, got {config.k!r}")
    if not 0.0 <= config.min_angle_deg <= 90.0:
        problems.append(f"min_angle_deg: must lie in [0, 90], got {config.min_angle_deg}")
    if config.q is not None and (not _is_int(config.q) or config.q < MIN_Q):
        problems.append(f"q: must be an integer >= {MIN_Q}, got {config.q!r}")
    if config.r is not None and not config.r > 0:
        problems.append(f"r: must be positive, got {config.r}")
    if not _is_int(config.memory_budget_bytes) or config.memory_budget_bytes <= 0:
        problems.append(f"memory_budget_bytes: must be a positive integer, got {config.memory_budget_bytes!r}")
    if not _is_int(config.batch_size_min) or config.batch_size_min < 1:
        problems.append(f"batch_size_min: must be a positive integer, got {config.batch_size_min!r}")
    if config.r_min < 0:
        problems.append(f"r_min: must be >= 0, got {config.r_min}")
    if config.center not in CENTERS:
        problems.append(f"center: must be one of {CENTERS}, got {config.center!r}")
    problems.extend(config.augment.violations())
    if config.predictor not in PREDICTORS:
        problems.append(f"predictor: must be one of {PREDICTORS}, got {config.predictor!r}")
    if not 0.0 <= config.flip_rate < 1.0:
        problems.append(f"flip_rate: must lie in [0, 1), got {config.flip_rate}")
    if config.blur_sigma < 0:
        problems.append(f"blur_sigma: must be >= 0, got {config.blur_sigma}")
    if not _is_int(config.epochs) or config.epochs < 1:
        problems.append(f"epochs: must be a positive integer, got {config.epochs!r}")
    if not config.learning_rate > 0:
        problems.append(f"learning_rate: must be positive, got {config.learning_rate}")
    if not _is_int(config.train_slices_per_view) or config.train_slices_per_view < 1:
        problems.append(f"train_slices_per_view: must be a positive integer, got {config.train_slices_per_view!r}")
    if not _is_int(config.threads) or config.threads < 1:
        problems.append(f"threads: must be a positive integer, got {config.threads!r}")
    return problems


def missing_paths(problems: list[str]) -> bool:
    return any("does not exist" in p for p in problems)


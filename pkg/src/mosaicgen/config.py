"""Pipeline configuration: one YAML file, every generation knob is a key."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .attention import AggregationConfig
from .bilateral import BilateralParams
from .catalog import STRATEGIES, TEMPLATES
from .errors import ConfigError
from .geometry import SUPPORTED_OBJECT_COUNTS, CanvasSpec, InvalidSpec
from .masks import FilterPolicy

RANDOM_OBJECT_COUNT = "random"

_LAYER_FILTER_NAMES = {"1/32": 32, "1/16": 16, "1/8": 8, 32: 32, 16: 16, 8: 8}


@dataclass(frozen=True)
class CanvasConfig:
    width: int = 1024
    height: int = 768
    object_count: int | str = 4  # 1 | 2 | 4 | "random"
    jitter_ratio: float = 0.375
    overlap_x: int = 64
    overlap_y: int = 48
    latent_factor: int = 8

    def counts(self) -> tuple[int, ...]:
        if self.object_count == RANDOM_OBJECT_COUNT:
            return SUPPORTED_OBJECT_COUNTS
        return (int(self.object_count),)

    def spec_for(self, n: int) -> CanvasSpec:
        return CanvasSpec(width=self.width, height=self.height, object_count=n,
                          jitter_ratio=self.jitter_ratio, overlap_x=self.overlap_x,
                          overlap_y=self.overlap_y, latent_factor=self.latent_factor)


@dataclass(frozen=True)
class PipelineConfig:
    canvas: CanvasConfig = field(default_factory=CanvasConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    bilateral: BilateralParams = field(default_factory=BilateralParams)
    filters: FilterPolicy = field(default_factory=FilterPolicy)
    prompt_template: str = "photo_single_def"
    category_strategy: str = "all_buckets"
    catalog_path: str | None = None
    images_per_category: int = 25
    seed: int = 0
    steps: int = 50
    guidance_scale: float = 7.5
    scheduler_id: str = "lms"
    backend: str = "synthetic"
    mfat_dir: str | None = None
    output_dir: str = "out"
    workers: int = 1
    synthetic_dtype: str = "f32"

    def digest(self) -> str:
        """Hash of the generation-relevant knobs (not where output lands)."""
        data = asdict(self)
        for execution_key in ("output_dir", "workers"):
            data.pop(execution_key)
        blob = json.dumps(data, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _require(condition: bool, fieldpath: str, message: str) -> None:
    if not condition:
        raise ConfigError(fieldpath, message)


def validate_config(config: PipelineConfig) -> PipelineConfig:
    canvas = config.canvas
    if canvas.object_count != RANDOM_OBJECT_COUNT:
        _require(canvas.object_count in SUPPORTED_OBJECT_COUNTS, "canvas.object_count",
                 f"must be one of {SUPPORTED_OBJECT_COUNTS} or '{RANDOM_OBJECT_COUNT}'")
    for n in canvas.counts():
        try:
            canvas.spec_for(n)
        except InvalidSpec as exc:
            field_name = "canvas"
            text = str(exc)
            for key in ("jitter_ratio", "overlap_x", "overlap_y", "latent_factor",
                        "object_count", "width", "height"):
                if key in text:
                    field_name = f"canvas.{key}"
                    break
            raise ConfigError(field_name, text) from None
    _require(config.prompt_template in TEMPLATES, "prompt_template",
             f"must be one of {TEMPLATES}")
    _require(config.category_strategy in STRATEGIES, "category_strategy",
             f"must be one of {STRATEGIES}")
    _require(config.images_per_category >= 1, "images_per_category", "must be >= 1")
    _require(config.steps >= 1, "steps", "must be >= 1")
    _require(config.guidance_scale > 0, "guidance_scale", "must be positive")
    _require(config.backend in ("synthetic", "mfat_dir"), "backend",
             "must be 'synthetic' or 'mfat_dir'")
    _require(config.workers >= 1, "workers", "must be >= 1")
    _require(config.synthetic_dtype in ("f16", "f32"), "synthetic_dtype",
             "must be 'f16' or 'f32'")
    _require(0 <= config.seed < 2**64, "seed", "must fit in 64 unsigned bits")
    return config


def _build_section(cls, data: dict, fieldpath: str, transforms: dict | None = None):
    if not isinstance(data, dict):
        raise ConfigError(fieldpath, f"expected a mapping, got {type(data).__name__}")
    known = {f for f in cls.__dataclass_fields__}
    for key in data:
        if key not in known:
            raise ConfigError(f"{fieldpath}.{key}", "unknown key")
    values = dict(data)
    for key, fn in (transforms or {}).items():
        if key in values:
            values[key] = fn(values[key], f"{fieldpath}.{key}")
    try:
        return cls(**values)
    except (ValueError, InvalidSpec) as exc:
        text = str(exc)
        for key in known:
            if key in text:
                raise ConfigError(f"{fieldpath}.{key}", text) from None
        raise ConfigError(fieldpath, text) from None


def _layer_filter(value, fieldpath: str) -> int:
    if value not in _LAYER_FILTER_NAMES:
        raise ConfigError(fieldpath, "must be one of '1/32', '1/16', '1/8' (or 32/16/8)")
    return _LAYER_FILTER_NAMES[value]


def _step_filter(value, fieldpath: str):
    if value in (None, "all"):
        return None
    if not isinstance(value, int) or value < 1:
        raise ConfigError(fieldpath, "must be a positive integer or 'all'")
    return value


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config document must be a mapping")
    sections = {
        "canvas": (CanvasConfig, None),
        "aggregation": (AggregationConfig,
                        {"layer_filter": _layer_filter, "step_filter": _step_filter}),
        "bilateral": (BilateralParams, None),
        "filters": (FilterPolicy, None),
    }
    scalars = {f for f in PipelineConfig.__dataclass_fields__} - set(sections)
    values: dict = {}
    for key, value in data.items():
        if key in sections:
            cls, transforms = sections[key]
            values[key] = _build_section(cls, value, key, transforms)
        elif key in scalars:
            values[key] = value
        else:
            raise ConfigError(key, "unknown key")
    try:
        config = PipelineConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError("<root>", str(exc)) from None
    return validate_config(config)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML in {path}: {exc}") from None
    if data is None:
        data = {}
    return config_from_dict(data)


def apply_overrides(config: PipelineConfig, *, seed=None, workers=None, backend=None,
                    output_dir=None) -> PipelineConfig:
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if workers is not None:
        updates["workers"] = workers
    if backend is not None:
        updates["backend"] = backend
    if output_dir is not None:
        updates["output_dir"] = str(output_dir)
    if not updates:
        return config
    return validate_config(replace(config, **updates))

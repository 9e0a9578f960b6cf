"""Experiment configuration: one nested dataclass tree, YAML in and out.

Everything an experiment needs lives in ExperimentConfig; a run directory
gets a copy saved next to its checkpoints so results stay self-describing.
Dotted-path overrides (``train.lr=3e-4``) are parsed with YAML scalar rules,
so numbers, booleans, and strings all coerce the obvious way.
"""

from __future__ import annotations

import dataclasses
import enum
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .cameras import RayEncodingKind
from .losses import LossWeights
from .model import ModelConfig
from .noise import GainCurve, NoiseWindow
from .renderer import RenderConfig
from .scenes import SceneGenConfig


@dataclass(frozen=True)
class TrainConfig:
    total_iters: int = 5000
    num_inputs: int = 2
    lr: float = 3e-4
    lr_warmup_iters: int = 250
    lr_final_fraction: float = 0.05
    betas: tuple[float, float] = (0.9, 0.95)
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    consistency_enabled: bool = True
    consistency_warmup_fraction: float = 0.32
    task_mix: float = 0.5          # probability a step trains denoising vs nvs
    num_train_scenes: int = 24
    seed: int = 0
    log_every: int = 50
    checkpoint_every: int = 2500

    def __post_init__(self):
        if self.total_iters < 1:
            raise ValueError("total_iters must be positive")
        if not 0 <= self.consistency_warmup_fraction <= 1:
            raise ValueError("consistency_warmup_fraction must lie in [0, 1]")
        if not 0 <= self.task_mix <= 1:
            raise ValueError("task_mix must lie in [0, 1]")
        if self.lr <= 0 or self.lr_final_fraction < 0:
            raise ValueError("bad learning rate settings")


@dataclass(frozen=True)
class EvalConfig:
    num_scenes: int = 20
    seed: int = 777
    num_inputs: int = 2
    gain: float = 8.0
    gains: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 16.0, 20.0)
    task: str = "denoise"

    def __post_init__(self):
        if self.task not in ("denoise", "nvs"):
            raise ValueError(f"unknown eval task {self.task!r}")
        if self.num_scenes < 1:
            raise ValueError("num_scenes must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    render: RenderConfig = field(default_factory=RenderConfig)
    noise_window: NoiseWindow = field(default_factory=NoiseWindow)
    gain_curve: GainCurve = field(default_factory=GainCurve)
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def config_to_dict(cfg) -> dict:
    """Dataclass tree to plain dict (enums to values, tuples to lists)."""

    def convert(value):
        if dataclasses.is_dataclass(value):
            return {f.name: convert(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, enum.Enum):
            return value.value
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        return value

    return convert(cfg)


def _build(cls, data):
    """Recursively construct a dataclass from a plain dict."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValueError(f"expected a mapping for {cls.__name__}, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        kwargs[f.name] = _coerce(hints[f.name], data[f.name])
    return cls(**kwargs)


def _coerce(hint, value):
    if dataclasses.is_dataclass(hint):
        return _build(hint, value)
    origin = typing.get_origin(hint)
    if origin is tuple and isinstance(value, (list, tuple)):
        args = typing.get_args(hint)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v) for v in value)
        if len(args) == len(value):
            return tuple(_coerce(a, v) for a, v in zip(args, value))
        return tuple(value)
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hint is float and isinstance(value, str):
        # yaml 1.1 parses bare "1e-3" as a string; accept it as a float here.
        return float(value)
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def save_config(cfg: ExperimentConfig, path):
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text())
    if data is None:
        return ExperimentConfig()
    return config_from_dict(data)


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``section.field=value`` strings; values parse as YAML scalars."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form path=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = data
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                raise ValueError(f"override path {dotted!r} does not exist")
            node = node[key]
        if keys[-1] not in node:
            raise ValueError(f"override path {dotted!r} does not exist")
        node[keys[-1]] = yaml.safe_load(raw)
    return config_from_dict(data)


def desk_config(full: bool = True, seed: int = 0) -> ExperimentConfig:
    """Small-budget recipe: 64x64, two input views, a few thousand steps.

    The synthetic world is room-sized (camera orbit radius 21, depth range
    9-39) rather than tabletop-sized. The depth self-consistency term is a
    squared gap in world units, so its strength relative to the image-space
    terms grows with world scale; this scale keeps it strong enough to
    stabilize depth under input noise without washing out the frequency
    term's sharpness gains at this iteration budget.

    ``full=False`` is the plain ablation baseline: the consistency and
    frequency terms are switched off and the ray conditioning falls back to
    plucker coordinates, leaving only the photometric objective.
    """
    weights = LossWeights() if full else LossWeights(consistency=0.0, freq=0.0)
    encoding = RayEncodingKind.CLOSEST_POINT if full else RayEncodingKind.PLUCKER
    scene = SceneGenConfig(camera_distance=21.0, wall_z=7.2,
                           wall_half_extent=27.0, wall_scale=1.5,
                           wall_relief=0.72, blob_radius=5.4,
                           blob_scale=(0.48, 1.8), look_jitter=0.9)
    model = ModelConfig(image_size=(64, 64), near=9.0, far=39.0,
                        scale_init=0.36, scale_min=0.012, scale_max=1.8,
                        ray_encoding=encoding)
    train = TrainConfig(total_iters=5000, num_inputs=2, seed=seed,
                        consistency_enabled=full)
    render = RenderConfig(max_radius_px=16, z_cull=0.9 * model.near)
    return ExperimentConfig(model=model, train=train, loss_weights=weights,
                            render=render, scene=scene)

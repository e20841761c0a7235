"""Run configuration: TOML sections with strict key checking.

Every hyperparameter has a default mirroring the published full-scale setup;
``configs/paper.toml`` restates them explicitly and ``configs/toy.toml``
holds the desk-scale values used by the synthetic benchmark and CI.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 path
    import tomli as tomllib

from .errors import ConfigError


@dataclass
class ModelConfig:
    image_height: int = 256
    image_width: int = 448
    d: int = 512                 # model width after the 1x1 reduction
    b_l: int = 2                 # base encoder layers
    t_l: int = 4                 # class-token transformer layers
    heads: int = 8
    backbone: str = "resnet-like"   # "toy" | "resnet-like"
    roi_grid: int = 7
    d_cls: int = 0               # instrument class-embedding width; 0 -> d // 4
    norm_first: bool = False     # pre-norm transformer blocks when true
    n_tokens: int = 0            # target class tokens; 0 -> |targets|
    d_prime: int = 128           # projected node width in the interaction graph
    mp_variant: str = "gat"      # "gat" | "gcn" | "sage"
    mp_layers: int = 2
    mp_heads: int = 2
    ig_target_source: str = "output"   # "output" | "input" token features

    def __post_init__(self):
        if self.backbone not in ("toy", "resnet-like"):
            raise ConfigError(f"unknown backbone '{self.backbone}'")
        if self.mp_variant not in ("gat", "gcn", "sage"):
            raise ConfigError(f"unknown mp_variant '{self.mp_variant}'")
        if self.ig_target_source not in ("output", "input"):
            raise ConfigError(f"unknown ig_target_source '{self.ig_target_source}'")
        if self.d % 4 != 0:
            raise ConfigError("model width d must be divisible by 4")
        if self.d % self.heads != 0:
            raise ConfigError("d must be divisible by heads")
        if self.d_cls != 0 and not (0 < self.d_cls < self.d):
            raise ConfigError("d_cls must lie strictly between 0 and d (or 0 for auto)")
        if self.mp_variant == "gat" and self.d_prime % self.mp_heads != 0:
            raise ConfigError("d_prime must be divisible by mp_heads for GAT")

    @property
    def class_embed_dim(self) -> int:
        return self.d_cls if self.d_cls else self.d // 4


@dataclass
class StageConfig:
    optimizer: str = "sgd"       # "sgd" | "adam"
    epochs: int = 30
    batch_size: int = 32
    lr_backbone: float = 1e-3
    lr_base: float = 1e-3
    lr_mcit: float = 1e-2
    lr_ig: float = 1e-3
    weight_decay: float = 1e-6
    momentum: float = 0.9        # SGD only
    lr_decay: float = 0.99       # exponential, per epoch
    alpha: float = 1.0           # edge loss weight (stage 2)
    beta: float = 0.5            # verb loss weight (stage 2)

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer '{self.optimizer}'")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be non-negative")


def _paper_stage2() -> StageConfig:
    return StageConfig(optimizer="adam", lr_backbone=1e-5, lr_base=1e-4,
                       lr_mcit=1e-4, lr_ig=1e-3, weight_decay=0.0)


@dataclass
class DataConfig:
    dataset_dir: str = ""
    val_videos: Tuple[str, ...] = ()
    augment_hflip: bool = True
    pseudo_label_policy: str = "random"   # "random" | "first" for ambiguous frames

    def __post_init__(self):
        self.val_videos = tuple(self.val_videos)
        if self.pseudo_label_policy not in ("random", "first"):
            raise ConfigError(f"unknown pseudo_label_policy '{self.pseudo_label_policy}'")


@dataclass
class EvalConfig:
    iou_threshold: float = 0.5
    max_dets: int = 0                    # per-frame cap; 0 = uncapped
    emit_background: bool = False        # keep detections whose argmax verb is background
    drop_invalid_triplets: bool = False  # drop out-of-dictionary tuples at export
    export_score_threshold: float = 0.0  # visualization-only filter; 0 disables

    def __post_init__(self):
        if not (0.0 < self.iou_threshold <= 1.0):
            raise ConfigError("iou_threshold must be in (0, 1]")


@dataclass
class SynthSectionConfig:
    n_instruments: int = 3
    n_verbs: int = 3
    n_targets: int = 4
    image_height: int = 64
    image_width: int = 112
    frames: int = 500
    videos: int = 10
    max_targets: int = 2
    max_instruments: int = 2
    p_interact: float = 0.8


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    model: ModelConfig = field(default_factory=ModelConfig)
    stage1: StageConfig = field(default_factory=StageConfig)
    stage2: StageConfig = field(default_factory=_paper_stage2)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthSectionConfig = field(default_factory=SynthSectionConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict, where: str = "config") -> "RunConfig":
        raw = dict(raw)
        sections = {
            "model": ModelConfig, "stage1": StageConfig, "stage2": StageConfig,
            "data": DataConfig, "eval": EvalConfig, "synth": SynthSectionConfig,
        }
        kwargs = {}
        for name, section_cls in sections.items():
            sub = raw.pop(name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"{where}: section [{name}] must be a table")
            base = _paper_stage2() if name == "stage2" else section_cls()
            kwargs[name] = _merge(base, sub, f"{where}.[{name}]")
        top = _merge(cls(**{k: dataclasses.replace(v) for k, v in kwargs.items()}),
                     raw, where, skip=set(sections))
        return top


def _coerce(value, target, key, where):
    if isinstance(target, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}.{key}: expected bool, got {value!r}")
        return value
    if isinstance(target, int) and not isinstance(target, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}.{key}: expected int, got {value!r}")
        return value
    if isinstance(target, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}.{key}: expected number, got {value!r}")
        return float(value)
    if isinstance(target, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}.{key}: expected string, got {value!r}")
        return value
    if isinstance(target, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}.{key}: expected array, got {value!r}")
        return tuple(value)
    return value


def _merge(instance, overrides: dict, where: str, skip=frozenset()):
    known = {f.name: f for f in fields(instance)}
    for key, value in overrides.items():
        if key in skip:
            continue
        if key not in known:
            raise ConfigError(f"{where}: unknown key '{key}' "
                              f"(known: {', '.join(sorted(known))})")
        setattr(instance, key, _coerce(value, getattr(instance, key), key, where))
    post = getattr(instance, "__post_init__", None)
    if post is not None:
        post()
    return instance


def load_config(path=None, overrides: Optional[list] = None) -> RunConfig:
    """Load a TOML config file and apply ``section.key=value`` overrides."""
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        with open(path, "rb") as f:
            try:
                raw = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"{path}: invalid TOML: {e}") from e
    cfg = RunConfig.from_dict(raw, where=str(path) if path else "config")
    for item in overrides or []:
        cfg = apply_override(cfg, item)
    return cfg


def apply_override(cfg: RunConfig, item: str) -> RunConfig:
    """Apply one ``key=value`` or ``section.key=value`` override string."""
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form key=value")
    dotted, text = item.split("=", 1)
    parts = dotted.strip().split(".")
    target = cfg
    for p in parts[:-1]:
        if not hasattr(target, p):
            raise ConfigError(f"override '{item}': unknown section '{p}'")
        target = getattr(target, p)
    key = parts[-1]
    if not hasattr(target, key):
        raise ConfigError(f"override '{item}': unknown key '{key}'")
    current = getattr(target, key)
    try:
        if isinstance(current, bool):
            value = text.strip().lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int):
            value = int(text)
        elif isinstance(current, float):
            value = float(text)
        elif isinstance(current, tuple):
            value = tuple(s.strip() for s in text.split(",") if s.strip())
        else:
            value = text
    except ValueError as e:
        raise ConfigError(f"override '{item}': {e}") from e
    setattr(target, key, value)
    post = getattr(target, "__post_init__", None)
    if post is not None:
        post()
    return cfg


def describe_keys() -> str:
    """One line per config key with its default, for --help output."""
    lines = []
    cfg = RunConfig()
    for name in ("seed", "out_dir"):
        lines.append(f"  {name} = {getattr(cfg, name)!r}")
    for section in ("model", "stage1", "stage2", "data", "eval", "synth"):
        obj = getattr(cfg, section)
        for f in fields(obj):
            lines.append(f"  {section}.{f.name} = {getattr(obj, f.name)!r}")
    return "\n".join(lines)

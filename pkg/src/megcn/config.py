"""Flat ``key=value`` configuration for the model and the training run."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

DEFAULT_CHANNELS = (64, 64, 64, 64, 128, 128, 128, 256, 256, 256)
DEFAULT_STRIDES = (1, 1, 1, 1, 2, 1, 1, 2, 1, 1)
VARIANTS = ("me_gcn", "baseline", "baseline_tc", "early_fusion", "late_fusion")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    num_classes: int = 4
    in_channels: int = 3
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    strides: tuple[int, ...] = DEFAULT_STRIDES
    reduction: int = 8
    input_rel_channels: int = 8
    preset: str = "ntu25"
    mutual_mte: tuple[bool, ...] = (True,) * 10
    mutual_mfe: tuple[bool, ...] = (True,) * 10
    use_tc: bool = True
    tc_kernel: int = 5
    tc_dilations: tuple[int, ...] = (1, 2)
    residual: bool = True
    layer_norm: bool = True
    dropout: float = 0.5
    alpha_init: float = 1.0
    beta_init: float = 0.0
    variant: str = "me_gcn"
    init_seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def num_layers(self) -> int:
        return len(self.channels)

    @property
    def plan(self) -> list[tuple[int, int, int]]:
        """``(C_in, C_out, stride)`` per layer."""
        c_in = [self.in_channels, *self.channels[:-1]]
        return list(zip(c_in, self.channels, self.strides))

    def rel_channels(self, c_in: int) -> int:
        """Reduced FGB width; raw coordinate inputs that ``reduction`` does not divide use ``input_rel_channels``."""
        if c_in % self.reduction == 0:
            return c_in // self.reduction
        return self.input_rel_channels

    def validate(self):
        k = self.num_layers
        if k < 1:
            raise ConfigError("need at least one layer")
        for name in ("strides", "mutual_mte", "mutual_mfe"):
            if len(getattr(self, name)) != k:
                raise ConfigError(f"{name} has {len(getattr(self, name))} entries for {k} layers")
        for c in self.channels:
            if c % self.reduction:
                raise ConfigError(f"channel width {c} not divisible by reduction {self.reduction}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")


@dataclass
class TrainConfig:
    epochs: int = 65
    batch_size: int = 8
    base_lr: float = 0.01
    warmup_epochs: int = 5
    milestones: tuple[int, ...] = (35, 55)
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0004
    nesterov: bool = True
    frames: int = 64
    center: bool = True
    ref_joint: int = 1
    val_fraction: float = 0.25
    seed: int = 0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _field_kind(f) -> tuple[type, bool]:
    ann = str(f.type)
    for kind in (bool, int, float, str):
        if ann == kind.__name__:
            return kind, False
        if ann.startswith("tuple[") and kind.__name__ in ann:
            return kind, True
    raise TypeError(f"unsupported field type {ann}")


def _parse_value(f, text: str):
    kind, is_tuple = _field_kind(f)
    conv = _parse_bool if kind is bool else kind
    if is_tuple:
        return tuple(conv(item) for item in text.split(",") if item.strip())
    return conv(text.strip())


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _owner(key: str):
    for section, cls in (("model", ModelConfig), ("train", TrainConfig)):
        for f in fields(cls):
            if f.name == key:
                return section, f
    return None, None


def apply_settings(cfg: RunConfig, items: list[tuple[str, str, str]]) -> RunConfig:
    """Apply ``(key, value, where)`` triples; ``where`` labels errors."""
    updates = {"model": {}, "train": {}}
    for key, value, where in items:
        section, f = _owner(key)
        if f is None:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        try:
            updates[section][key] = _parse_value(f, value)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
    model_kw = {**dataclasses.asdict(cfg.model), **updates["model"]}
    # per-layer lists follow a change in depth unless given explicitly
    k = len(model_kw["channels"])
    for name in ("mutual_mte", "mutual_mfe"):
        if name not in updates["model"] and len(model_kw[name]) != k:
            model_kw[name] = (all(model_kw[name]),) * k
    if "strides" not in updates["model"] and len(model_kw["strides"]) != k:
        model_kw["strides"] = (1,) * k
    try:
        model = ModelConfig(**model_kw)
    except ConfigError as exc:
        raise ConfigError(f"invalid model config: {exc}") from None
    train = TrainConfig(**{**dataclasses.asdict(cfg.train), **updates["train"]})
    return RunConfig(model, train)


def parse_config(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    items = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        items.append((key.strip(), value.strip(), f"{source}:{lineno}"))
    return apply_settings(base or RunConfig(), items)


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), source=str(path))


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    items = []
    for i, item in enumerate(overrides):
        if "=" not in item:
            raise ConfigError(f"--set #{i + 1}: expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        items.append((key.strip(), value.strip(), f"--set {item}"))
    return apply_settings(cfg, items)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for obj in (cfg.model, cfg.train):
        lines += [f"{f.name}={_format_value(getattr(obj, f.name))}" for f in fields(obj)]
    return "\n".join(lines) + "\n"

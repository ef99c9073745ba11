"""Flat run configuration and its ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

try:
    import tomllib as tomli
except ImportError:  # Python 3.10
    import tomli

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .mldce import MLDCEConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    image_size: int = 64
    channels: int = 1
    num_classes: int = 4
    # encoder
    patch_size: int = 8
    d_model: int = 64
    encoder_depth: int = 2
    encoder_heads: int = 4
    d_ff: int = 128
    # decoder
    decoder_depth: int = 2
    decoder_heads: int = 4
    upscale: int = 4
    hyper_dim: int = 16
    # ml-dce
    enable_mcc: bool = True
    enable_icc: bool = True
    mcc_heads: int = 1
    icc_heads: int = 4
    share_queries: bool = False
    alpha_init: float = 0.0
    beta_init: float = 0.0
    # fine-tuning
    finetune: str = "lora"
    lora_rank: int = 4
    lora_scaling: float = 0.0  # 0 selects 1/rank
    # objective
    lambda1: float = 0.2
    lambda2: float = 0.8
    dice_eps: float = 1e-5
    dual_resolution: bool = True
    # optimizer
    learning_rate: float = 5e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_schedule: str = "constant"
    # loop
    batch_size: int = 4
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("learning_rate and batch_size must be positive, epochs non-negative")
        if self.lambda1 < 0 or self.lambda2 < 0 or (self.lambda1 == 0 and self.lambda2 == 0):
            raise ConfigError("lambda1, lambda2 must be non-negative and not both zero")
        if self.finetune not in ("lora", "full"):
            raise ConfigError(f"finetune must be 'lora' or 'full', got {self.finetune!r}")
        if self.lr_schedule != "constant":
            raise ConfigError(f"unsupported lr_schedule {self.lr_schedule!r}")
        if self.image_size % self.patch_size:
            raise ConfigError("image_size must be divisible by patch_size")
        low_side = self.image_size // self.patch_size * self.upscale
        if self.upscale < 1 or self.image_size % low_side:
            raise ConfigError("image_size must be a multiple of (image_size / patch_size) * upscale")

    def encoder_config(self):
        return EncoderConfig(
            image_size=self.image_size,
            patch_size=self.patch_size,
            d_model=self.d_model,
            depth=self.encoder_depth,
            heads=self.encoder_heads,
            channels=self.channels,
            d_ff=self.d_ff,
        )

    def decoder_config(self):
        return DecoderConfig(
            num_classes=self.num_classes,
            d_model=self.d_model,
            depth=self.decoder_depth,
            heads=self.decoder_heads,
            d_ff=self.d_ff,
            upscale=self.upscale,
            hyper_dim=self.hyper_dim,
        )

    def mldce_config(self):
        return MLDCEConfig(
            num_classes=self.num_classes,
            d_model=self.d_model,
            enable_mcc=self.enable_mcc,
            enable_icc=self.enable_icc,
            mcc_heads=self.mcc_heads,
            icc_heads=self.icc_heads,
            d_ff=self.d_ff,
            share_queries=self.share_queries,
            alpha_init=self.alpha_init,
            beta_init=self.beta_init,
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values, base=None):
        return config_from_dict(cls, values, base)


def config_from_dict(cls, values, base=None):
    """Build dataclass ``cls`` from ``base`` (or defaults) overridden by ``values``."""
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = dataclasses.asdict(base if base is not None else cls())
    for key, value in values.items():
        merged[key] = _coerce(key, value, known[key].type)
    try:
        return cls(**merged)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _coerce(key, value, type_name):
    kind = type_name if isinstance(type_name, str) else type_name.__name__
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if kind == "tuple":
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
            raise ConfigError(f"{key} must be an array of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string, got {value!r}")
    return value


def parse_config_text(text, cls=None, base=None):
    """Parse flat ``key = value`` lines (TOML syntax) into ``cls`` (default RunConfig)."""
    cls = cls or RunConfig
    try:
        values = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"config must be flat; found table [{nested[0]}]")
    return config_from_dict(cls, values, base)


def load_config(path, cls=None, base=None):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read(), cls, base)


def dump_config(config):
    lines = []
    for key, value in dataclasses.asdict(config).items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = f'"{value}"'
        elif isinstance(value, tuple):
            text = "[" + ", ".join(repr(v) for v in value) + "]"
        else:
            text = repr(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"

"""Flat ``key = value`` run configuration files."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from pmilm.model import ModelConfig

PRESET_DIR = Path(__file__).parent / "configs"

MODEL_KEYS = ("layers", "hidden", "d", "dropout", "k", "init_scale", "forget_bias")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    lr: float = 1.0
    decay_factor: float = 1.2
    decay_start_epoch: int = 6
    clip_norm: float = 5.0
    epochs: int = 39
    batch_size: int = 20
    bptt_len: int = 20
    seed: int = 1234
    share_noise: bool = False
    loss_normalization: str = "token"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_vocab: int = 10000
    min_count: int = 1
    noise_exponent: float = 1.0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.loss_normalization not in ("token", "batch"):
            raise ConfigError("loss_normalization must be 'token' or 'batch'")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.decay_factor <= 0:
            raise ConfigError("decay_factor must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.bptt_len < 1:
            raise ConfigError("epochs, batch_size and bptt_len must be positive")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _coerce(raw: str, kind: type, key: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


_MODEL_TYPES = {"layers": int, "hidden": int, "d": int, "dropout": float, "k": int, "init_scale": float, "forget_bias": float}
_TRAIN_TYPES = {f.name: {"int": int, "float": float, "bool": bool, "str": str}[f.type] for f in dataclasses.fields(TrainConfig)}


def parse_config(text: str, source: str = "<config>") -> dict[str, Any]:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        kind = _MODEL_TYPES.get(key) or _TRAIN_TYPES.get(key)
        if kind is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(raw, kind, key)
    return values


def resolve_config_path(name: str | Path) -> Path:
    path = Path(name)
    if path.exists():
        return path
    preset = PRESET_DIR / (path.name if path.suffix else f"{path.name}.cfg")
    if preset.exists():
        return preset
    raise ConfigError(f"config file not found: {name}")


def load_config(name: str | Path) -> dict[str, Any]:
    path = resolve_config_path(name)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def split_config(values: dict[str, Any], vocab_size: int, mode: str) -> tuple[ModelConfig, TrainConfig]:
    model_kwargs = {k: values[k] for k in MODEL_KEYS if k in values}
    train_kwargs = {k: v for k, v in values.items() if k not in MODEL_KEYS}
    return ModelConfig(vocab_size=vocab_size, mode=mode, **model_kwargs), TrainConfig(**train_kwargs)

"""Training configuration and the flat key-value config file format.

The config file is plain text, one `key = value` per line, `#` comments
allowed. It carries every TrainConfig field plus the dataset keys; unknown
keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .data import DatasetSpec
from .losses import AlphaLossConfig
from .nets import Variant

DEFAULT_ALPHA_BUDGET_FRACTION = 0.4  # of the pixel count of one layer
DEFAULT_ALPHA_WEIGHT = 0.05


@dataclass
class TrainConfig:
    """Everything that determines a training run besides the dataset itself."""

    variant: Variant = Variant.CGAN
    n: int = 2
    m: int = 32
    latent_dim: int = 64
    hidden_dim: int = 128
    image_size: int = 64
    base_channels: int = 64
    iterations: int = 1000
    seed: int = 0
    gamma_d: float = 1e-4
    gamma_g: float = 2e-4
    gamma_g_gan: float = 2e-4
    gamma_g_vae: float = 1e-4
    gamma_e: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha_budget: float | None = None  # defaults to 0.4 * pixel count when the variant uses it
    alpha_weight: float | None = None
    nonsaturating: bool = False
    single_backward: bool = False
    clip_norm: float = 10.0  # 0 disables gradient clipping
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        self.variant = Variant(self.variant)

    def validate(self) -> None:
        if self.n < 1 or self.m < 1:
            raise ValueError(f"n and m must be >= 1 (n={self.n}, m={self.m})")
        if self.latent_dim < 1 or self.hidden_dim < 1 or self.base_channels < 1:
            raise ValueError("latent_dim, hidden_dim, base_channels must be >= 1")
        if self.image_size < 16 or self.image_size % 16 != 0:
            raise ValueError(f"image_size must be a positive multiple of 16, got {self.image_size}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        for name in ("gamma_d", "gamma_g", "gamma_g_gan", "gamma_g_vae", "gamma_e"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be nonnegative")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be nonnegative")
        if not self.variant.uses_alpha and (
            self.alpha_budget is not None or self.alpha_weight is not None
        ):
            raise ValueError(
                f"alpha_budget/alpha_weight only apply to +A variants, not '{self.variant.value}'"
            )
        if self.alpha_budget is not None and self.alpha_budget > self.image_size**2:
            raise ValueError(
                f"alpha_budget {self.alpha_budget} exceeds the per-layer pixel count "
                f"{self.image_size ** 2}"
            )
        if self.alpha_budget is not None and self.alpha_budget < 0:
            raise ValueError("alpha_budget must be nonnegative")
        if self.alpha_weight is not None and self.alpha_weight < 0:
            raise ValueError("alpha_weight must be nonnegative")

    def resolved_alpha(self) -> AlphaLossConfig | None:
        """The alpha-loss settings with defaults filled in, or None for non-+A variants."""
        if not self.variant.uses_alpha:
            return None
        budget = self.alpha_budget
        if budget is None:
            budget = DEFAULT_ALPHA_BUDGET_FRACTION * self.image_size**2
        weight = self.alpha_weight if self.alpha_weight is not None else DEFAULT_ALPHA_WEIGHT
        return AlphaLossConfig(budget=budget, weight=weight)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _parse_value(raw: str, ftype, key: str):
    raw = raw.strip()
    if raw == "none":
        return None
    if ftype is bool:
        if raw.lower() not in _BOOL_WORDS:
            raise ValueError(f"config key '{key}' expects a boolean, got '{raw}'")
        return _BOOL_WORDS[raw.lower()]
    if ftype is int:
        return int(raw)
    if ftype is float:
        return float(raw)
    if ftype is Variant:
        return Variant(raw)
    return raw


# (field name, python type, belongs to) for every key the file may contain
_TRAIN_TYPES: dict[str, type] = {
    "variant": Variant,
    "n": int,
    "m": int,
    "latent_dim": int,
    "hidden_dim": int,
    "image_size": int,
    "base_channels": int,
    "iterations": int,
    "seed": int,
    "gamma_d": float,
    "gamma_g": float,
    "gamma_g_gan": float,
    "gamma_g_vae": float,
    "gamma_e": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "alpha_budget": float,
    "alpha_weight": float,
    "nonsaturating": bool,
    "single_backward": bool,
    "clip_norm": float,
    "checkpoint_every": int,
}
_DATA_TYPES: dict[str, type] = {
    "data_source": str,
    "data_count": int,
    "data_seed": int,
    "data_layers": int,
}


def read_config(path: str | Path) -> tuple[TrainConfig, DatasetSpec]:
    """Parse a config file into the training and dataset settings.

    Unknown keys and repeated keys raise ValueError.
    """
    train_kwargs: dict = {}
    data_kwargs: dict = {}
    seen: set[str] = set()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got '{line.strip()}'")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key in seen:
            raise ValueError(f"{path}:{lineno}: duplicate key '{key}'")
        seen.add(key)
        if key in _TRAIN_TYPES:
            train_kwargs[key] = _parse_value(raw, _TRAIN_TYPES[key], key)
        elif key in _DATA_TYPES:
            data_kwargs[key] = _parse_value(raw, _DATA_TYPES[key], key)
        else:
            raise ValueError(f"{path}:{lineno}: unknown config key '{key}'")
    config = TrainConfig(**train_kwargs)
    config.validate()
    spec = DatasetSpec(
        source=data_kwargs.get("data_source", "synthetic"),
        resolution=config.image_size,
        shuffle_seed=data_kwargs.get("data_seed", 0),
        synthetic_count=data_kwargs.get("data_count", 2000),
        synthetic_layers=data_kwargs.get("data_layers", 2),
    )
    return config, spec


def write_config(path: str | Path, config: TrainConfig, spec: DatasetSpec | None = None) -> None:
    """Write a config file readable by read_config."""
    lines = []
    for key in _TRAIN_TYPES:
        value = getattr(config, key)
        if value is None:
            continue
        if isinstance(value, Variant):
            value = value.value
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    if spec is not None:
        lines.append(f"data_source = {spec.source}")
        lines.append(f"data_count = {spec.synthetic_count}")
        lines.append(f"data_seed = {spec.shuffle_seed}")
        lines.append(f"data_layers = {spec.synthetic_layers}")
    Path(path).write_text("\n".join(lines) + "\n")

"""Experiment configuration files: strict `[section]` / `key = value` text.

Unknown sections or keys are rejected with the offending file, line, and
key named.  Blank lines and `#` comments are permitted on input; the
canonical re-emitter drops them, and any accepted file round-trips through
emit -> parse unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields
from typing import Optional

from .data import ShapeSpec
from .nets import NetConfig
from .train import Seeds, TrainConfig


class ConfigError(ValueError):
    """Configuration file cannot be parsed or validated."""


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    """Everything a run needs: data model, networks, training, pool, output."""

    # [data]
    topology: str = "globular"
    image_side: int = 64
    radius_lo: float = 8.0
    radius_hi: float = 14.0
    ring_thickness_lo: float = 3.0
    ring_thickness_hi: float = 5.0
    fg_intensity: float = 0.75
    bg_intensity: float = 0.25
    noise_std: float = 0.04
    illum_amplitude: float = 0.15
    halo: float = 1.25
    distractors: int = 0
    distractor_radius_lo: float = 7.0
    distractor_radius_hi: float = 11.0
    distractor_thickness: float = 2.5
    distractor_strength: float = 1.0
    n_train: int = 48
    n_test: int = 16
    data_seed: int = 0
    target_ratio: float = 0.015
    erosion_element: str = "cross3"
    # [net]
    unet_depth: int = 3
    base_channels: int = 8
    disc_layers: int = 3
    # [train]
    variant: str = "partial_ce"
    epochs: int = 60
    lr0: float = 2e-4
    lambda_s: float = 0.01
    lambda_a: Optional[float] = None
    init_seed: int = 0
    order_seed: int = 1
    pool_seed: int = 2
    augment_seed: int = 3
    augment: str = "auto"
    eval_every: int = 1
    d_warmup: int = 0
    d_steps: int = 1
    # [pool]
    pool_mode: str = "auto"
    # [output]
    output_dir: str = "runs"

    def shape_spec(self) -> ShapeSpec:
        return ShapeSpec(
            topology=self.topology, image_side=self.image_side,
            radius_lo=self.radius_lo, radius_hi=self.radius_hi,
            ring_thickness_lo=self.ring_thickness_lo,
            ring_thickness_hi=self.ring_thickness_hi,
            fg_intensity=self.fg_intensity, bg_intensity=self.bg_intensity,
            noise_std=self.noise_std, illum_amplitude=self.illum_amplitude,
            halo=self.halo, distractors=self.distractors,
            distractor_radius_lo=self.distractor_radius_lo,
            distractor_radius_hi=self.distractor_radius_hi,
            distractor_thickness=self.distractor_thickness,
            distractor_strength=self.distractor_strength)

    def net_config(self) -> NetConfig:
        return NetConfig(unet_depth=self.unet_depth, base_channels=self.base_channels,
                         disc_layers=self.disc_layers, image_side=self.image_side,
                         init_seed=self.init_seed)

    def train_config(self, variant: Optional[str] = None,
                     master_seed: Optional[int] = None,
                     lambda_a: Optional[float] = None) -> TrainConfig:
        seeds = Seeds(self.init_seed, self.order_seed, self.pool_seed,
                      self.augment_seed)
        if master_seed is not None:
            seeds = Seeds.from_master(master_seed)
        return TrainConfig(
            variant=variant or self.variant,
            epochs=self.epochs, lr0=self.lr0, lambda_s=self.lambda_s,
            lambda_a=self.lambda_a if lambda_a is None else lambda_a,
            net=self.net_config(), seeds=seeds,
            augment=self.augment, eval_every=self.eval_every,
            d_warmup=self.d_warmup, d_steps=self.d_steps)


_SCHEMA = {
    "data": {
        "topology": str, "image_side": int, "radius_lo": float,
        "radius_hi": float, "ring_thickness_lo": float,
        "ring_thickness_hi": float, "fg_intensity": float,
        "bg_intensity": float, "noise_std": float, "illum_amplitude": float,
        "halo": float, "distractors": int, "distractor_radius_lo": float,
        "distractor_radius_hi": float, "distractor_thickness": float,
        "distractor_strength": float,
        "n_train": int, "n_test": int, "seed": int,
        "target_ratio": float, "erosion_element": str,
    },
    "net": {"unet_depth": int, "base_channels": int, "disc_layers": int},
    "train": {
        "variant": str, "epochs": int, "lr0": float, "lambda_s": float,
        "lambda_a": float, "init_seed": int, "order_seed": int,
        "pool_seed": int, "augment_seed": int, "augment": str,
        "eval_every": int, "d_warmup": int, "d_steps": int,
    },
    "pool": {"mode": str},
    "output": {"dir": str},
}

# config key -> ExperimentConfig attribute where the names differ
_ALIASES = {
    ("data", "seed"): "data_seed",
    ("pool", "mode"): "pool_mode",
    ("output", "dir"): "output_dir",
}


def _attr_for(section: str, key: str) -> str:
    return _ALIASES.get((section, key), key)


def parse_config_text(text: str, origin: str = "<string>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(
                    f"{origin}:{lineno}: unknown section [{section}]")
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise ConfigError(
                f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(
                f"{origin}:{lineno}: key {key!r} appears before any [section]")
        if key not in _SCHEMA[section]:
            raise ConfigError(
                f"{origin}:{lineno}: unknown key {key!r} in section [{section}]")
        caster = _SCHEMA[section][key]
        try:
            parsed = caster(value)
        except ValueError:
            raise ConfigError(
                f"{origin}:{lineno}: key {key!r} expects "
                f"{caster.__name__}, got {value!r}") from None
        setattr(cfg, _attr_for(section, key), parsed)
    _validate(cfg, origin)
    return cfg


def parse_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from None
    return parse_config_text(text, origin=path)


def _validate(cfg: ExperimentConfig, origin: str) -> None:
    from .data import DataError
    from .nets import ConfigError as NetError
    from .train import TrainingError, VARIANTS

    try:
        cfg.shape_spec().validate()
        cfg.net_config().validate()
        cfg.train_config().validate()
    except (DataError, NetError, TrainingError) as exc:
        raise ConfigError(f"{origin}: {exc}") from None
    if cfg.n_train < 1 or cfg.n_test < 0:
        raise ConfigError(f"{origin}: n_train must be >= 1 and n_test >= 0")
    if not 0.0 < cfg.target_ratio < 1.0:
        raise ConfigError(f"{origin}: target_ratio must be in (0, 1)")
    if cfg.pool_mode not in ("auto", "partial", "unpaired", "paired"):
        raise ConfigError(f"{origin}: unknown pool mode {cfg.pool_mode!r}")
    if cfg.erosion_element not in ("cross3", "square3"):
        raise ConfigError(f"{origin}: unknown erosion element {cfg.erosion_element!r}")
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"{origin}: unknown variant {cfg.variant!r}")


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical text form: fixed section and key order, no comments."""
    lines = []
    for section, keys in _SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            value = getattr(cfg, _attr_for(section, key))
            if value is None:
                continue
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)

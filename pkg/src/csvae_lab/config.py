"""Run configuration: line-based ``key = value`` text with dotted keys.

Comments start with ``#``. Unknown keys are rejected; every field has a
default, so the empty string parses. serialize() emits the canonical form
(sorted keys, every field explicit) and parse(serialize(c)) == c.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .optim import GAMMA
from .stochastic import BERNOULLI, EXCLUSIVE

MODEL_KINDS = ("vae", "condvae", "condvae_info", "csvae", "classifier")

# desk-scale downscale of the reference schedule: 300 epochs with the
# milestones that fit inside them
DESK_EPOCHS = 300
DESK_MILESTONES = (1, 3, 9, 27, 81, 243)


@dataclass
class ModelConfig:
    kind: str = "csvae"
    x_shape: tuple = ()          # () = infer from the dataset
    z_dim: int = 2
    k: int = 0                   # 0 = infer from the dataset
    w_dim_per_attr: int = 2
    enc_hidden: tuple = (64, 64)
    dec_hidden: tuple = (64, 64)
    adv_hidden: tuple = (64, 64)
    conv_channels: tuple = (8, 16, 32)
    arch: str = "auto"
    label_mode: str = BERNOULLI
    betas: tuple = ()            # () = per-kind defaults
    prior_mean_y1: float = 3.0
    prior_sigma_y1: float = 1.0
    prior_mean_y0: float = 0.0
    prior_sigma_y0: float = 0.1
    dec_logvar_clamp: float = 7.0
    adversary_ratio: int = 1


@dataclass
class OptimConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    milestones: tuple = DESK_MILESTONES
    gamma: float = GAMMA
    batch_size: int = 64
    epochs: int = DESK_EPOCHS


@dataclass
class DataConfig:
    path: str = ""               # CSVD file; empty means use the generator
    generator: str = ""          # "swiss-roll" | "glyphs"
    n: int = 10_000
    noise_sd: float = 0.0
    seed: int = 0
    size: int = 32
    attributes: tuple = ("stripes",)
    paired: bool = False
    split: tuple = (0.8, 0.1, 0.1)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    out: str = "out"


_SECTIONS = {"model": ModelConfig, "optim": OptimConfig, "data": DataConfig}
_TOP = {"seed": int, "out": str}


def _parse_value(raw: str, kind, key: str):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is str:
            return raw
        if kind is tuple:
            if raw == "":
                return ()
            items = [p.strip() for p in raw.split(",") if p.strip() != ""]
            out = []
            for item in items:
                try:
                    out.append(int(item))
                except ValueError:
                    try:
                        out.append(float(item))
                    except ValueError:
                        out.append(item)
            return tuple(out)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    raise ConfigError(f"unsupported field type for {key}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key in _TOP:
            setattr(cfg, key, _parse_value(raw, _TOP[key], key))
            continue
        if "." not in key:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        target = getattr(cfg, section)
        valid = {f.name: f.type for f in fields(target)}
        if name not in valid:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        current = getattr(target, name)
        kind = type(current) if current is not None else str
        if isinstance(current, tuple):
            kind = tuple
        setattr(target, name, _parse_value(raw, kind, key))
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.model.kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model.kind {cfg.model.kind!r}")
    if cfg.model.label_mode not in (BERNOULLI, EXCLUSIVE):
        raise ConfigError(f"unknown model.label_mode {cfg.model.label_mode!r}")
    if cfg.model.betas and len(cfg.model.betas) != 5:
        raise ConfigError("model.betas must list five weights")
    if cfg.optim.epochs < 1:
        raise ConfigError("optim.epochs must be >= 1")
    if cfg.optim.lr <= 0:
        raise ConfigError("optim.lr must be positive")
    if cfg.optim.batch_size < 1:
        raise ConfigError("optim.batch_size must be >= 1")
    if not 0 < cfg.optim.gamma <= 1:
        raise ConfigError("optim.gamma must lie in (0, 1]")
    if list(cfg.optim.milestones) != sorted(set(cfg.optim.milestones)):
        raise ConfigError("optim.milestones must be strictly increasing")
    if cfg.data.generator not in ("", "swiss-roll", "glyphs"):
        raise ConfigError(f"unknown data.generator {cfg.data.generator!r}")
    if len(cfg.data.split) != 3 or abs(sum(cfg.data.split) - 1.0) > 1e-9:
        raise ConfigError("data.split must be three proportions summing to 1")


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section in sorted(_SECTIONS):
        target = getattr(cfg, section)
        for f in sorted(fields(target), key=lambda f: f.name):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(target, f.name))}")
    for key in sorted(_TOP):
        lines.append(f"{key} = {_format_value(getattr(cfg, key))}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())

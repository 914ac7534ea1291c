"""Run configuration and its flat ``key=value`` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Optional, Tuple

from .errors import ConfigError

PRIOR_KINDS = ("gaussian", "flow", "diffusion")


@dataclass(frozen=True)
class TrainConfig:
    dataset: str = "eight_gaussians"
    n_data: int = 2000
    latent_dim: int = 2
    prior: str = "gaussian"
    T: int = 50
    beta_min: float = 1e-3
    beta_max: float = 0.2
    embed_dim: int = 16
    denoiser_hidden: Tuple[int, ...] = (64, 64)
    flow_hidden: int = 64
    encoder_hidden: Tuple[int, ...] = (64, 64)
    decoder_hidden: Tuple[int, ...] = (64, 64)
    activation: str = "relu"
    likelihood: str = "gaussian"
    decoder_variance: str = "shared"
    decoder_logvar_init: float = 0.0
    binarize_threshold: Optional[float] = None
    learning_rate: float = 5e-4
    epochs: int = 250
    batch_size: int = 128
    seed: int = 0
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    per_element_t: bool = False
    # off by default: the endpoint KL is left out of the training objective
    endpoint_kl_in_loss: bool = False
    grad_clip: float = 100.0
    output_dir: str = "runs"

    def __post_init__(self):
        validate(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_kv(self) -> Dict[str, str]:
        return {f.name: _format(getattr(self, f.name)) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}
# keys a config file must state explicitly for a given prior
REQUIRED_BY_PRIOR = {"diffusion": ("T",), "flow": (), "gaussian": ()}


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "Optional[float]":
        return None if raw.lower() == "none" else float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "Tuple[int, ...]":
        return tuple(int(p) for p in raw.split(",") if p.strip()) if raw else ()
    return raw


def validate(cfg: TrainConfig) -> None:
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg}", key=key)

    need(cfg.prior in PRIOR_KINDS, "prior", f"must be one of {PRIOR_KINDS}, got {cfg.prior!r}")
    need(cfg.latent_dim >= 1, "latent_dim", "must be >= 1")
    need(cfg.epochs >= 1, "epochs", "must be >= 1")
    need(cfg.batch_size >= 1, "batch_size", "must be >= 1")
    need(cfg.n_data >= 10, "n_data", "must be >= 10")
    need(cfg.T >= 1, "T", "must be >= 1")
    need(0.0 < cfg.beta_min <= cfg.beta_max < 1.0, "beta_min", "need 0 < beta_min <= beta_max < 1")
    need(cfg.embed_dim >= 1, "embed_dim", "must be >= 1")
    need(cfg.flow_hidden >= 1, "flow_hidden", "must be >= 1")
    need(cfg.learning_rate > 0.0, "learning_rate", "must be positive")
    need(cfg.grad_clip >= 0.0, "grad_clip", "must be >= 0")
    need(cfg.likelihood in ("gaussian", "bernoulli"), "likelihood", "must be gaussian or bernoulli")
    need(cfg.decoder_variance in ("shared", "full"), "decoder_variance", "must be shared or full")
    need(cfg.activation in ("relu", "tanh", "softplus"), "activation", "must be relu, tanh or softplus")
    for key in ("encoder_hidden", "decoder_hidden", "denoiser_hidden"):
        need(all(w >= 1 for w in getattr(cfg, key)), key, "widths must be positive")
    need(
        0.0 <= cfg.val_fraction < 1.0 and 0.0 <= cfg.test_fraction < 1.0 and cfg.val_fraction + cfg.test_fraction < 1.0,
        "val_fraction",
        "split fractions must leave a training set",
    )


def from_kv(pairs: Dict[str, str], require_prior_keys: bool = False) -> TrainConfig:
    values = {}
    for key, raw in pairs.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        try:
            values[key] = _parse(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})", key=key) from None
    if require_prior_keys:
        for key in REQUIRED_BY_PRIOR.get(values.get("prior", "gaussian"), ()):
            if key not in values:
                raise ConfigError(f"missing required key {key!r} for prior={values['prior']}", key=key)
    return TrainConfig(**values)


def parse_config_text(text: str) -> TrainConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    pairs: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}", line=lineno)
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}", key=key, line=lineno)
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", key=key, line=lineno)
        try:
            _parse(key, raw)
        except ValueError:
            raise ConfigError(f"line {lineno}: cannot parse value {raw!r} for {key}", key=key, line=lineno) from None
        pairs[key] = raw
    return from_kv(pairs, require_prior_keys=True)


def load_config(path) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k}={v}\n" for k, v in cfg.to_kv().items())

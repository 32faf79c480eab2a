"""Run configuration and its flat ``key = value`` file format.

Example::

    # training recipe
    seed = 42
    epochs = 100
    lr = 0.001
    model.latent_dim = 64

Blank lines and ``#`` comments are ignored.  Keys prefixed with ``model.``
set :class:`~detect.model.ModelConfig` fields.  Unknown keys are errors.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig

SPLITS = ("holdout_0.8", "kfold_5")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    epochs: int = 100
    batch_size: int = 32
    lr: float = 0.001
    weight_decay: float = 1e-4
    label_smoothing: float = 0.1
    clip_norm: float = 1.0
    warmup_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    split: str = "holdout_0.8"
    split_granularity: str = "window"
    nrs_predicate: str = "and"
    trim_s: float = 2.5
    window: int = 100
    step: int = 50
    data_dir: str = ""
    out: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.lr > 0 or self.weight_decay < 0 or not self.clip_norm > 0:
            raise ConfigError("lr and clip_norm must be positive, weight_decay non-negative")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must lie in [0, 1)")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1]")
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}")
        if self.split_granularity not in ("window", "trial"):
            raise ConfigError("split_granularity must be 'window' or 'trial'")
        if self.nrs_predicate not in ("and", "or"):
            raise ConfigError("nrs_predicate must be 'and' or 'or'")
        if self.window != self.model.seq_len:
            raise ConfigError("window must equal model.seq_len")
        self.model.validate()
        return self

    @property
    def train_fraction(self):
        return float(self.split.split("_")[1]) if self.split.startswith("holdout") else None

    @property
    def folds(self):
        return int(self.split.split("_")[1]) if self.split.startswith("kfold") else None


def _coerce(kind, raw, where):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def _field_types(cls):
    return {f.name: _TYPES.get(f.type, f.type) for f in dataclasses.fields(cls)}


def apply_overrides(config, pairs, source="<override>"):
    """Return ``config`` updated from ``(key, raw_value, line)`` triples."""
    top = _field_types(RunConfig)
    sub = _field_types(ModelConfig)
    run_updates, model_updates = {}, {}
    for key, raw, line in pairs:
        where = f"{source}:{line}" if line else source
        if key.startswith("model."):
            name = key[len("model."):]
            if name not in sub:
                raise ConfigError(f"{where}: unknown key {key!r}")
            model_updates[name] = _coerce(sub[name], raw, where)
        elif key in top and key != "model":
            run_updates[key] = _coerce(top[key], raw, where)
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
    model = dataclasses.replace(config.model, **model_updates)
    return dataclasses.replace(config, model=model, **run_updates)


def parse_pairs(text, source="<config>"):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if not key or not raw:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        pairs.append((key, raw, lineno))
    return pairs


def load_run_config(path=None, overrides=()):
    """Defaults, then the file at ``path`` (if any), then ``key=value`` overrides."""
    config = RunConfig()
    if path:
        text = Path(path).read_text(encoding="utf-8")
        config = apply_overrides(config, parse_pairs(text, str(path)), str(path))
    pairs = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, raw = item.split("=", 1)
        pairs.append((key.strip(), raw.strip(), None))
    config = apply_overrides(config, pairs)
    return config.validate()


def dump_run_config(config):
    lines = []
    for f in dataclasses.fields(RunConfig):
        if f.name == "model" or getattr(config, f.name) == "":
            continue
        lines.append(f"{f.name} = {getattr(config, f.name)!r}".replace("'", ""))
    for f in dataclasses.fields(ModelConfig):
        lines.append(f"model.{f.name} = {getattr(config.model, f.name)!r}".replace("'", ""))
    return "\n".join(lines) + "\n"

"""Transformer encoder activity classifier.

Input windows ``(B, n, d)`` are projected to ``m`` features, offset by a
fixed sinusoidal positional table, passed through ``L`` post-norm encoder
layers, mean-pooled over time and mapped to ``K`` logits.
"""
from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import binio
from .datapipe import NormStats
from .errors import ConfigError, ContractError, IngestionError, ShapeError
from .tensor import Tensor, as_tensor, dropout, gelu, layer_norm, relu, softmax

BUNDLE_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 6
    seq_len: int = 100
    latent_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    dropout_p: float = 0.1
    num_classes: int = 3
    seed: int = 42
    activation: str = "gelu"
    positional_encoding: bool = True
    layer_norm_eps: float = 1e-9

    def validate(self):
        for name in ("input_dim", "seq_len", "latent_dim", "num_layers", "num_heads", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.latent_dim % self.num_heads:
            raise ConfigError(
                f"latent_dim {self.latent_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.latent_dim % 2:
            raise ConfigError("latent_dim must be even for the sinusoidal positional encoding")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if self.activation not in ("gelu", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        return self


@dataclass
class ClassifierBundle:
    config: ModelConfig
    params: dict
    class_names: tuple
    norm_stats: NormStats | None = None
    metadata: dict = field(default_factory=dict)

    def parameter_count(self):
        return sum(p.size for p in self.params.values())

    def gradients(self):
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self.params.items()
        }


def parameter_shapes(config):
    """Ordered ``name -> shape`` map; fully determined by the config."""
    d, m, f, k = config.input_dim, config.latent_dim, config.ffn_dim, config.num_classes
    shapes = {"proj.weight": (d, m), "proj.bias": (m,)}
    for i in range(config.num_layers):
        p = f"layers.{i}."
        for part in ("q", "k", "v", "out"):
            shapes[p + f"attn.{part}.weight"] = (m, m)
            shapes[p + f"attn.{part}.bias"] = (m,)
        shapes[p + "norm1.weight"] = (m,)
        shapes[p + "norm1.bias"] = (m,)
        shapes[p + "ffn.in.weight"] = (m, f)
        shapes[p + "ffn.in.bias"] = (f,)
        shapes[p + "ffn.out.weight"] = (f, m)
        shapes[p + "ffn.out.bias"] = (m,)
        shapes[p + "norm2.weight"] = (m,)
        shapes[p + "norm2.bias"] = (m,)
    shapes["head.weight"] = (m, k)
    shapes["head.bias"] = (k,)
    return shapes


def init_params(config, class_names=None):
    """Fresh bundle seeded from ``config.seed`` (norm stats unset).

    Matrices get Glorot-uniform weights, except the classifier head which is
    drawn at std 0.02 so the initial logits are near zero.
    """
    config.validate()
    if class_names is None:
        class_names = tuple(f"class{i}" for i in range(config.num_classes))
    if len(class_names) != config.num_classes:
        raise ConfigError("class_names length must equal num_classes")
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith("norm1.weight") or name.endswith("norm2.weight"):
            value = np.ones(shape)
        elif name.endswith(".bias"):
            value = np.zeros(shape)
        elif name == "head.weight":
            value = rng.normal(0.0, 0.02, size=shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            value = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(value, requires_grad=True)
    return ClassifierBundle(config, params, tuple(class_names))


@functools.lru_cache(maxsize=16)
def _pe_table(n, m):
    pos = np.arange(n, dtype=np.float64)[:, None]
    rates = 10000.0 ** (np.arange(0, m, 2, dtype=np.float64) / m)
    table = np.empty((n, m))
    table[:, 0::2] = np.sin(pos / rates)
    table[:, 1::2] = np.cos(pos / rates)
    table.flags.writeable = False
    return table


def positional_encoding(n, m):
    """Sinusoidal table: ``sin(pos / 10000**(2i/m))`` on even columns, cos on odd."""
    if m % 2:
        raise ConfigError(f"positional encoding needs an even dimension, got {m}")
    return _pe_table(n, m).copy()


def _attention(h, P, p, cfg, train, rng):
    b, n, m = h.shape
    heads = cfg.num_heads
    dk = m // heads

    def split(t):
        return t.reshape(b, n, heads, dk).transpose(0, 2, 1, 3)

    q = split(h @ P[p + "attn.q.weight"] + P[p + "attn.q.bias"]) * (1.0 / math.sqrt(dk))
    k = split(h @ P[p + "attn.k.weight"] + P[p + "attn.k.bias"])
    v = split(h @ P[p + "attn.v.weight"] + P[p + "attn.v.bias"])
    weights = softmax(q @ k.transpose(0, 1, 3, 2), axis=-1)
    ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, n, m)
    out = ctx @ P[p + "attn.out.weight"] + P[p + "attn.out.bias"]
    return dropout(out, cfg.dropout_p, rng, train)


def _encoder_layer(h, P, i, cfg, train, rng):
    p = f"layers.{i}."
    eps = cfg.layer_norm_eps
    h = layer_norm(h + _attention(h, P, p, cfg, train, rng),
                   P[p + "norm1.weight"], P[p + "norm1.bias"], eps)
    act = gelu if cfg.activation == "gelu" else relu
    f = act(h @ P[p + "ffn.in.weight"] + P[p + "ffn.in.bias"])
    f = f @ P[p + "ffn.out.weight"] + P[p + "ffn.out.bias"]
    f = dropout(f, cfg.dropout_p, rng, train)
    return layer_norm(h + f, P[p + "norm2.weight"], P[p + "norm2.bias"], eps)


def forward(bundle, batch, train_mode=False, rng=None):
    """Logits ``(B, K)`` for a normalized batch ``(B, n, d)``.

    Dropout (after attention, after the FFN and before the head) is active
    only in ``train_mode`` and then draws from ``rng``.
    """
    cfg = bundle.config
    x = as_tensor(batch)
    if x.ndim != 3 or x.shape[1:] != (cfg.seq_len, cfg.input_dim):
        raise ShapeError(
            f"expected batch (B, {cfg.seq_len}, {cfg.input_dim}), got {x.shape}"
        )
    P = bundle.params
    h = x @ P["proj.weight"] + P["proj.bias"]
    if cfg.positional_encoding:
        h = h + _pe_table(cfg.seq_len, cfg.latent_dim)
    for i in range(cfg.num_layers):
        h = _encoder_layer(h, P, i, cfg, train_mode, rng)
    pooled = dropout(h.mean(axis=1), cfg.dropout_p, rng, train_mode)
    return pooled @ P["head.weight"] + P["head.bias"]


def predict(bundle, batch, chunk=128):
    """Class indices and probabilities (eval mode).

    Ties resolve to the lowest class index (``np.argmax`` order).
    """
    batch = np.asarray(batch.data if isinstance(batch, Tensor) else batch, dtype=np.float64)
    probs = []
    for start in range(0, len(batch), chunk):
        logits = forward(bundle, batch[start : start + chunk]).data
        probs.append(softmax(logits).data)
    if probs:
        probs = np.concatenate(probs)
    else:
        probs = np.zeros((0, bundle.config.num_classes))
    return np.argmax(probs, axis=1), probs


# persistence ----------------------------------------------------------------

def save_bundle(bundle, path):
    meta = {
        "kind": "classifier_bundle",
        "version": BUNDLE_VERSION,
        "config": asdict(bundle.config),
        "class_names": list(bundle.class_names),
        "metadata": bundle.metadata,
    }
    arrays = {f"param:{name}": p.data for name, p in bundle.params.items()}
    if bundle.norm_stats is not None:
        arrays["norm:mean"] = bundle.norm_stats.mean
        arrays["norm:std"] = bundle.norm_stats.std
    binio.write(path, meta, arrays)


def load_bundle(path):
    meta, arrays = binio.read(path)
    if meta.get("kind") != "classifier_bundle" or meta.get("version") != BUNDLE_VERSION:
        raise IngestionError("not a classifier bundle of a supported version", path)
    config = ModelConfig(**meta["config"]).validate()
    params = {}
    for name, shape in parameter_shapes(config).items():
        arr = arrays.get(f"param:{name}")
        if arr is None or arr.shape != shape:
            raise IngestionError(f"parameter {name!r} missing or mis-shaped", path)
        params[name] = Tensor(arr, requires_grad=True)
    stats = None
    if "norm:mean" in arrays:
        stats = NormStats(arrays["norm:mean"], arrays["norm:std"])
        if np.any(stats.std <= 0):
            raise ContractError("norm stats must have strictly positive std")
    return ClassifierBundle(config, params, tuple(meta["class_names"]), stats, meta["metadata"])

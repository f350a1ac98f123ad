"""Behavioral and neural encoders, attention pooling, projection heads.

The layer stacks follow the usual pose/imaging encoder layout: a temporal
1D conv tower over pose frames, and for images a per-frame 2D conv tower
followed by the same kind of temporal tower. Widths are configurable; the
defaults are the reduced-width variants used for the synthetic world.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nswt
from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError
from .nn import MLP, ConvBlock, DenseBlock, Linear, Module, _kaiming
from .tensor import Tensor

ATTENTION_MODES = ("verbatim", "softmax")


@dataclass
class EncoderConfig:
    n_joints: int = 10
    behavior_frames: int = 8
    neural_frames: int = 32
    image_size: tuple[int, int] = (64, 64)
    # average-pool factor applied to raw frames before the 2D tower
    input_pool: int = 4
    frame_channels: tuple[int, ...] = (8, 16)
    frame_fc: tuple[int, ...] = (128, 128)
    neural_temporal_channels: tuple[int, ...] = (64, 80, 96, 112, 128)
    behavior_channels: tuple[int, ...] = (64, 80, 96, 112, 128)
    # temporal max-pool (k=2, s=2) is inserted after this many temporal convs
    temporal_pool_after: int = 2
    attention_dim: int = 12
    attention_mode: str = "verbatim"
    embedding_dim: int = 128
    projection_dim: int = 128
    dtype: str = "float32"

    def __post_init__(self):
        self.image_size = tuple(self.image_size)
        for name in ("frame_channels", "frame_fc", "neural_temporal_channels", "behavior_channels"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.embedding_dim <= 0 or self.projection_dim <= 0:
            raise ConfigurationError("embedding_dim and projection_dim must be positive")
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigurationError(f"attention_mode must be one of {ATTENTION_MODES}")
        h, w = self.image_size
        p = self.input_pool
        if p < 1 or h % p or w % p:
            raise ConfigurationError(f"image {h}x{w} not divisible by input_pool={p}")
        h, w = h // p, w // p
        for _ in self.frame_channels:
            if h < 2 or w < 2:
                raise ConfigurationError("frame tower pools the image below 1 pixel")
            h, w = h // 2, w // 2
        if not self.frame_fc:
            raise ConfigurationError("frame_fc needs at least one layer")
        for frames in (self.behavior_frames, self.neural_frames):
            if self.temporal_pool_after and frames < 2:
                raise ConfigurationError("temporal pooling needs at least 2 frames")

    @property
    def frame_feature_size(self) -> int:
        h, w = self.image_size[0] // self.input_pool, self.image_size[1] // self.input_pool
        for _ in self.frame_channels:
            h, w = h // 2, w // 2
        return self.frame_channels[-1] * h * w if self.frame_channels else h * w

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def attention_pool(S: Tensor, W1: Tensor, W2: Tensor, mode: str = "verbatim") -> Tensor:
    """Additive attention over the time axis.

    ``S`` is [T, D] or [B, T, D]. Scores are ``r = W2 tanh(W1 S^T)``. In
    ``softmax`` mode the weights are ``softmax(r)``; in ``verbatim`` mode they
    are ``-log softmax(r)`` (always >= 0, and identically 0 when T == 1).
    Returns ``sum_t a_t S_t``.
    """
    if mode not in ATTENTION_MODES:
        raise ConfigurationError(f"unknown attention mode {mode!r}")
    squeeze = S.ndim == 2
    if squeeze:
        S = T.reshape(S, (1,) + S.shape)
    r = T.matmul(T.tanh(T.matmul(S, T.transpose(W1))), T.transpose(W2))  # [B, T, 1]
    logp = T.log_softmax(r, axis=1)
    a = T.exp(logp) if mode == "softmax" else T.scale(logp, -1.0)
    out = T.tsum(T.mul(a, S), axis=1)
    return T.reshape(out, (out.shape[1],)) if squeeze else out


class TemporalTower(Module):
    """1D conv stack over [B, C, T], attention pooling, final fc."""

    def __init__(self, c_in: int, channels: tuple[int, ...], pool_after: int, cfg: EncoderConfig,
                 rng: np.random.Generator):
        dt = cfg.np_dtype
        self.blocks = []
        c = c_in
        for i, width in enumerate(channels):
            pool = 2 if pool_after and i + 1 == pool_after else 0
            self.blocks.append(ConvBlock(c, width, (3,), rng, dt, pool=pool))
            c = width
        self.att_w1 = _kaiming(rng, (cfg.attention_dim, c), c, dt)
        self.att_w2 = _kaiming(rng, (1, cfg.attention_dim), cfg.attention_dim, dt)
        self.fc = Linear(c, cfg.embedding_dim, rng, dt)
        self.mode = cfg.attention_mode

    def forward(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        S = T.transpose(x, (0, 2, 1))
        return self.fc(attention_pool(S, self.att_w1, self.att_w2, self.mode))


class BehaviorEncoder(Module):
    """Pose windows [B, T_b, J, 3] -> embeddings [B, embedding_dim]."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.tower = TemporalTower(cfg.n_joints * 3, cfg.behavior_channels, cfg.temporal_pool_after, cfg, rng)

    def forward(self, b) -> Tensor:
        b = T.as_tensor(b, self.cfg.np_dtype)
        if b.ndim == 3:
            b = T.reshape(b, (1,) + b.shape)
        _, t, j, c = b.shape
        if j != self.cfg.n_joints or c != 3:
            raise DimensionError(f"pose window has {j}x{c} joints/coords, expected {self.cfg.n_joints}x3")
        x = T.reshape(b, (b.shape[0], t, j * 3))
        return self.tower(T.transpose(x, (0, 2, 1)))


class NeuralEncoder(Module):
    """Image windows [B, T_n, H, W] -> embeddings [B, embedding_dim].

    The first part runs per frame without temporal downsampling; its
    per-frame features are then fed to a temporal tower.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        dt = cfg.np_dtype
        self.frame_blocks = []
        c = 1
        for width in cfg.frame_channels:
            self.frame_blocks.append(ConvBlock(c, width, (3, 3), rng, dt, pool=2))
            c = width
        self.frame_fcs = []
        n = cfg.frame_feature_size
        for width in cfg.frame_fc:
            self.frame_fcs.append(DenseBlock(n, width, rng, dt))
            n = width
        self.tower = TemporalTower(n, cfg.neural_temporal_channels, cfg.temporal_pool_after, cfg, rng)

    def forward(self, n) -> Tensor:
        n = T.as_tensor(n, self.cfg.np_dtype)
        if n.ndim == 3:
            n = T.reshape(n, (1,) + n.shape)
        b, t, h, w = n.shape
        if (h, w) != tuple(self.cfg.image_size):
            raise DimensionError(f"image size {h}x{w} does not match config {self.cfg.image_size}")
        x = T.reshape(n, (b * t, 1, h, w))
        x = T.pool_avg(x, self.cfg.input_pool)
        for blk in self.frame_blocks:
            x = blk(x)
        x = T.reshape(x, (b * t, -1))
        for fc in self.frame_fcs:
            x = fc(x)
        x = T.reshape(x, (b, t, x.shape[1]))
        return self.tower(T.transpose(x, (0, 2, 1)))


class ProjectionHead(MLP):
    """Non-linear projection h -> z (not normalised)."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__(cfg.embedding_dim, cfg.projection_dim, cfg.projection_dim, rng, cfg.np_dtype)


class Discriminator(MLP):
    """Domain classifier producing logits over ``n_domains``."""

    def __init__(self, cfg: EncoderConfig, n_domains: int, rng: np.random.Generator):
        if n_domains < 2:
            raise ConfigurationError("a domain discriminator needs at least 2 domains")
        super().__init__(cfg.embedding_dim, cfg.embedding_dim, n_domains, rng, cfg.np_dtype)
        self.n_domains = n_domains


class ModelBundle(Module):
    """All trainable parts of one run.

    ``heads`` holds optional extras keyed by name: ``disc_b``/``disc_n`` for
    the adversarial baseline, ``regressor`` or ``classifier`` for the
    non-contrastive baselines.
    """

    def __init__(self, cfg: EncoderConfig, seed: int = 0, n_domains: int = 0,
                 discriminators: bool = False, extra_heads: dict | None = None):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.seed = seed
        self.f_b = BehaviorEncoder(cfg, rng)
        self.f_n = NeuralEncoder(cfg, rng)
        self.g_b = ProjectionHead(cfg, rng)
        self.g_n = ProjectionHead(cfg, rng)
        self.heads: dict[str, Module] = {}
        self.head_spec: dict[str, int] = {}
        if discriminators:
            self.heads["disc_b"] = Discriminator(cfg, n_domains, rng)
            self.heads["disc_n"] = Discriminator(cfg, n_domains, rng)
            self.head_spec["disc_b"] = self.head_spec["disc_n"] = n_domains
        for name, n_out in (extra_heads or {}).items():
            self.heads[name] = Linear(cfg.embedding_dim, n_out, rng, cfg.np_dtype)
            self.head_spec[name] = n_out

    # head modules live in a dict, so extend the attribute walk
    def named_parameters(self, prefix: str = ""):
        out = super().named_parameters(prefix)
        for name, m in self.heads.items():
            out.extend(m.named_parameters(f"{prefix}heads.{name}."))
        return out

    def named_buffers(self, prefix: str = ""):
        out = super().named_buffers(prefix)
        for name, m in self.heads.items():
            out.extend(m.named_buffers(f"{prefix}heads.{name}."))
        return out

    def children(self):
        return super().children() + list(self.heads.values())

    def encode_behavior(self, b) -> Tensor:
        return self.f_b(b)

    def encode_neural(self, n) -> Tensor:
        return self.f_n(n)

    def project(self, h: Tensor, head: str) -> Tensor:
        if head == "behavior":
            return self.g_b(h)
        if head == "neural":
            return self.g_n(h)
        raise ValueError(f"head must be 'behavior' or 'neural', got {head!r}")

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


def save_checkpoint(path: str | os.PathLike, model: ModelBundle, manifest: dict | None = None,
                    extra_tensors: dict[str, np.ndarray] | None = None) -> None:
    """Write ``manifest.json`` plus all named tensors to ``tensors.nswt``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    named = [(k, p.data) for k, p in model.named_parameters()] + list(model.named_buffers())
    named += list((extra_tensors or {}).items())
    meta = dict(manifest or {})
    meta.update({
        "format": "neuroswap-checkpoint",
        "version": 1,
        "encoder_config": model.cfg.to_dict(),
        "model_seed": model.seed,
        "head_spec": model.head_spec,
        "discriminators": "disc_b" in model.heads,
        "tensor_names": [k for k, _ in named],
    })
    nswt.save_many(path / "tensors.nswt", [a for _, a in named])
    with open(path / "manifest.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelBundle, dict, dict[str, np.ndarray]]:
    """Inverse of :func:`save_checkpoint`; returns (model, manifest, extras)."""
    path = Path(path)
    with open(path / "manifest.json") as fh:
        meta = json.load(fh)
    cfg = EncoderConfig.from_dict(meta["encoder_config"])
    spec = dict(meta.get("head_spec", {}))
    n_dom = spec.pop("disc_b", 0)
    spec.pop("disc_n", None)
    model = ModelBundle(cfg, seed=meta["model_seed"], n_domains=n_dom,
                        discriminators=meta.get("discriminators", False), extra_heads=spec)
    arrays = dict(zip(meta["tensor_names"], nswt.load_many(path / "tensors.nswt")))
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for key, target in list(params.items()) + list(buffers.items()):
        if key not in arrays:
            raise ContractError(f"checkpoint missing tensor {key}")
        src = arrays.pop(key)
        dst = target.data if isinstance(target, Tensor) else target
        if src.shape != dst.shape:
            raise ContractError(f"checkpoint tensor {key} has shape {src.shape}, expected {dst.shape}")
        dst[...] = src
    return model, meta, arrays

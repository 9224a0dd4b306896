"""Model configuration and parameter manifest.

The parameter manifest (ordered names and shapes) is a pure function of
the configuration, so checkpoints can be validated and rebuilt from the
config alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from ..errors import DimensionError
from ..masking import TokenLayout
from ..seeding import rng


@dataclass(frozen=True)
class ModelConfig:
    enc_dim: int
    dec_dim: int
    enc_blocks: int
    dec_blocks: int
    n_heads: int
    layout: TokenLayout
    patch_h: int
    patch_w: int
    img_h: int
    img_w: int
    ffn_mult: int = 4

    def __post_init__(self):
        if self.enc_dim % self.n_heads or self.dec_dim % self.n_heads:
            raise DimensionError("enc_dim and dec_dim must be divisible by n_heads")
        if self.layout.n_patch > 0:
            if self.img_h % self.patch_h or self.img_w % self.patch_w:
                raise DimensionError("patch dims must divide the image dims exactly")
            grid = (self.img_h // self.patch_h) * (self.img_w // self.patch_w)
            if grid != self.layout.n_patch:
                raise DimensionError(
                    f"patch grid {grid} != layout.n_patch {self.layout.n_patch}"
                )

    @property
    def patch_dim(self) -> int:
        return self.patch_h * self.patch_w

    @property
    def grid_h(self) -> int:
        return self.img_h // self.patch_h

    @property
    def grid_w(self) -> int:
        return self.img_w // self.patch_w

    def to_dict(self) -> dict:
        return {
            "enc_dim": self.enc_dim, "dec_dim": self.dec_dim,
            "enc_blocks": self.enc_blocks, "dec_blocks": self.dec_blocks,
            "n_heads": self.n_heads, "ffn_mult": self.ffn_mult,
            "layout": [self.layout.n_input, self.layout.n_output, self.layout.n_patch],
            "patch_h": self.patch_h, "patch_w": self.patch_w,
            "img_h": self.img_h, "img_w": self.img_w,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(
            enc_dim=obj["enc_dim"], dec_dim=obj["dec_dim"],
            enc_blocks=obj["enc_blocks"], dec_blocks=obj["dec_blocks"],
            n_heads=obj["n_heads"], ffn_mult=obj["ffn_mult"],
            layout=TokenLayout(*obj["layout"]),
            patch_h=obj["patch_h"], patch_w=obj["patch_w"],
            img_h=obj["img_h"], img_w=obj["img_w"],
        )


def desk_config(d_in: int = 9, d_out: int = 10, img_size: int = 24) -> ModelConfig:
    """Small configuration for laptop-scale runs and CI: 16 square patches,
    64/32 embedding widths, 2+2 blocks."""
    patch = img_size // 4
    return ModelConfig(
        enc_dim=64, dec_dim=32, enc_blocks=2, dec_blocks=2, n_heads=4,
        layout=TokenLayout(d_in, d_out, 16),
        patch_h=patch, patch_w=patch, img_h=img_size, img_w=img_size,
    )


def paper_scale_config(d_in: int = 9, d_out: int = 10, img_size: int = 60) -> ModelConfig:
    """Full-scale configuration: 512/256 embedding widths, 6 decoder blocks."""
    patch = img_size // 4
    return ModelConfig(
        enc_dim=512, dec_dim=256, enc_blocks=8, dec_blocks=6, n_heads=8,
        layout=TokenLayout(d_in, d_out, 16),
        patch_h=patch, patch_w=patch, img_h=img_size, img_w=img_size,
    )


def tiny_config() -> ModelConfig:
    """Minimal configuration used for gradient checks and golden tests."""
    return ModelConfig(
        enc_dim=8, dec_dim=8, enc_blocks=1, dec_blocks=1, n_heads=2,
        layout=TokenLayout(2, 2, 4),
        patch_h=4, patch_w=4, img_h=8, img_w=8,
    )


# ---------------------------------------------------------------------------
# Parameter manifest and initialization


def _block_manifest(prefix: str, dim: int, ffn_mult: int) -> list[tuple[str, tuple]]:
    f = ffn_mult * dim
    return [
        (f"{prefix}.ln1.g", (dim,)), (f"{prefix}.ln1.b", (dim,)),
        (f"{prefix}.attn.wq", (dim, dim)), (f"{prefix}.attn.bq", (dim,)),
        (f"{prefix}.attn.wk", (dim, dim)), (f"{prefix}.attn.bk", (dim,)),
        (f"{prefix}.attn.wv", (dim, dim)), (f"{prefix}.attn.bv", (dim,)),
        (f"{prefix}.attn.wo", (dim, dim)), (f"{prefix}.attn.bo", (dim,)),
        (f"{prefix}.ln2.g", (dim,)), (f"{prefix}.ln2.b", (dim,)),
        (f"{prefix}.ffn.w1", (dim, f)), (f"{prefix}.ffn.b1", (f,)),
        (f"{prefix}.ffn.w2", (f, dim)), (f"{prefix}.ffn.b2", (dim,)),
    ]


def param_manifest(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    """Ordered (name, shape) pairs for every trainable tensor."""
    s = cfg.layout.n_scalar
    entries: list[tuple[str, tuple]] = [
        ("embed.scalar", (s, cfg.enc_dim)),
        ("embed.patch", (cfg.patch_dim, cfg.enc_dim)),
        ("enc.pos_scalar", (s, cfg.enc_dim)),
    ]
    for i in range(cfg.enc_blocks):
        entries.extend(_block_manifest(f"enc.{i}", cfg.enc_dim, cfg.ffn_mult))
    entries.extend([
        ("enc.norm.g", (cfg.enc_dim,)), ("enc.norm.b", (cfg.enc_dim,)),
        ("bridge.w", (cfg.enc_dim, cfg.dec_dim)), ("bridge.b", (cfg.dec_dim,)),
        ("dec.mask_token", (cfg.dec_dim,)),
        ("dec.pos_scalar", (s, cfg.dec_dim)),
    ])
    for i in range(cfg.dec_blocks):
        entries.extend(_block_manifest(f"dec.{i}", cfg.dec_dim, cfg.ffn_mult))
    entries.extend([
        ("dec.norm.g", (cfg.dec_dim,)), ("dec.norm.b", (cfg.dec_dim,)),
        ("head.scalar", (s, cfg.dec_dim)),
        ("head.patch", (cfg.dec_dim, cfg.patch_dim)),
    ])
    return entries


_EMBED_STD = 0.02


def _trunc_normal(gen: np.random.Generator, shape: tuple, std: float) -> np.ndarray:
    # Inverse-CDF sampling restricted to +-2 sigma; exact and deterministic.
    lo, hi = ndtr(-2.0), ndtr(2.0)
    u = gen.uniform(lo, hi, size=shape)
    return ndtri(u) * std


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Seeded initialization following the manifest order.

    Embedding-like tensors and heads use truncated normal (std 0.02);
    weight matrices in blocks and the bridge use fan-in scaling; norms and
    biases start at identity/zero.
    """
    gen = rng(seed, "init")
    params: dict[str, np.ndarray] = {}
    for name, shape in param_manifest(cfg):
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("g",):
            value = np.ones(shape)
        elif leaf in ("b", "bq", "bk", "bv", "bo", "b1", "b2"):
            value = np.zeros(shape)
        elif name in ("embed.scalar", "embed.patch", "enc.pos_scalar",
                      "dec.mask_token", "dec.pos_scalar",
                      "head.scalar", "head.patch"):
            value = _trunc_normal(gen, shape, _EMBED_STD)
        else:
            fan_in = shape[0]
            value = gen.standard_normal(shape) / np.sqrt(fan_in)
        params[name] = np.ascontiguousarray(value, dtype=dtype)
    return params

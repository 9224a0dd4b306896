"""The multi-modal masked-autoencoder surrogate network.

Forward pass: embed only the visible tokens (scalars as value-scaled
embedding vectors, patches through a shared projection), run the encoder,
bridge to the decoder width, fill masked slots with the mask token, add
decoder positional encodings, run the decoder, and map every token to a
prediction (a real per scalar token, a pixel patch per patch token).

The pass is organized in named stages so fine-tuning can cache the frozen
prefix and recompute only the stages that contain trainable parameters:

    embed -> enc.0 .. enc.{n-1} -> bridge -> dec.0 .. dec.{m-1} -> head

``run_backward`` produces exact reverse-mode gradients and can stop once
all requested parameters have been covered.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..data import Batch, NormStats
from ..errors import DimensionError
from ..masking import TokenMask
from .config import ModelConfig, init_params, param_manifest
from .ops import (
    block_bwd,
    block_fwd,
    layernorm_bwd,
    layernorm_fwd,
    linear_bwd,
    linear_fwd,
)

# ---------------------------------------------------------------------------
# Tokenization helpers


def patchify(img: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Split images (B, H, W) into flattened patches (B, n_patch, patch_dim),
    row-major patch order, each patch flattened row-major."""
    single = img.ndim == 2
    if single:
        img = img[None]
    b, h, w = img.shape
    if h != cfg.img_h or w != cfg.img_w:
        raise DimensionError(f"image is {h}x{w}, config expects {cfg.img_h}x{cfg.img_w}")
    gh, gw, ph, pw = cfg.grid_h, cfg.grid_w, cfg.patch_h, cfg.patch_w
    patches = (
        img.reshape(b, gh, ph, gw, pw)
        .transpose(0, 1, 3, 2, 4)
        .reshape(b, gh * gw, ph * pw)
    )
    return patches[0] if single else patches


def unpatchify(patches: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    single = patches.ndim == 2
    if single:
        patches = patches[None]
    b = patches.shape[0]
    gh, gw, ph, pw = cfg.grid_h, cfg.grid_w, cfg.patch_h, cfg.patch_w
    img = (
        patches.reshape(b, gh, gw, ph, pw)
        .transpose(0, 1, 3, 2, 4)
        .reshape(b, cfg.img_h, cfg.img_w)
    )
    return img[0] if single else img


@lru_cache(maxsize=16)
def sinusoidal_pos_2d(grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    """Fixed 2-D sinusoidal positional table of shape (grid_h*grid_w, dim).

    Half the channels encode the row index, half the column index; each
    half carries the standard sine/cosine frequency ladder.
    """
    if dim % 4:
        raise DimensionError(f"positional dim must be divisible by 4, got {dim}")
    half = dim // 2

    def axis_table(n_pos: int) -> np.ndarray:
        omega = 1.0 / 10000.0 ** (np.arange(half // 2) / (half / 2.0))
        ang = np.arange(n_pos)[:, None] * omega[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    rows = axis_table(grid_h)
    cols = axis_table(grid_w)
    table = np.concatenate(
        [
            np.repeat(rows, grid_w, axis=0),
            np.tile(cols, (grid_h, 1)),
        ],
        axis=1,
    )
    table.flags.writeable = False
    return table


def embed_scalar(params: dict, value_norm: float, k: int) -> np.ndarray:
    """Embedding of one normalized scalar: value * v_k plus its learnable
    positional embedding."""
    table = params["embed.scalar"]
    if not 0 <= k < table.shape[0]:
        raise DimensionError(f"scalar token index {k} out of range [0, {table.shape[0]})")
    return value_norm * table[k] + params["enc.pos_scalar"][k]


def scalar_values(batch: Batch) -> np.ndarray:
    """Ground-truth normalized values for all scalar tokens: (B, n_in + n_out)."""
    return np.concatenate([batch.x, batch.o], axis=1)


def tile_mask(mask: TokenMask, n: int) -> np.ndarray:
    """Visible-index matrix (n, V) with the same mask for every sample."""
    vis = np.array(mask.visible, dtype=np.intp)
    return np.broadcast_to(vis, (n, vis.size))


# ---------------------------------------------------------------------------
# Staged forward / backward


def stage_list(cfg: ModelConfig) -> list[str]:
    return (
        ["embed"]
        + [f"enc.{i}" for i in range(cfg.enc_blocks)]
        + ["bridge"]
        + [f"dec.{i}" for i in range(cfg.dec_blocks)]
        + ["head"]
    )


def param_stage(name: str, cfg: ModelConfig) -> str:
    """The stage whose backward pass produces this parameter's gradient."""
    if name in ("embed.scalar", "embed.patch", "enc.pos_scalar"):
        return "embed"
    if name.startswith(("enc.norm.", "bridge.")) or name in ("dec.mask_token", "dec.pos_scalar"):
        return "bridge"
    if name.startswith(("dec.norm.", "head.")):
        return "head"
    if name.startswith(("enc.", "dec.")):
        kind, idx = name.split(".")[:2]
        return f"{kind}.{idx}"
    raise KeyError(f"unknown parameter {name!r}")


@dataclass
class Tape:
    """Forward-pass record: per-stage caches plus the final predictions."""

    start: str
    vis: np.ndarray                  # (B, V) visible token indices
    caches: dict = field(default_factory=dict)
    pred_scalar: np.ndarray | None = None   # (B, n_scalar)
    pred_patch: np.ndarray | None = None    # (B, n_patch, patch_dim)
    features: np.ndarray | None = None      # (B, T, dec_dim) decoder output


def stage_input(tape: Tape, stage: str) -> np.ndarray:
    """The activation that feeds ``stage``; reusable as a partial-forward carry."""
    return tape.caches[stage][0]


def run_forward(params: dict, cfg: ModelConfig, values: np.ndarray,
                patches: np.ndarray, vis: np.ndarray,
                start: str = "embed", carry: np.ndarray | None = None) -> Tape:
    """Forward pass from ``start`` (with ``carry`` as that stage's input).

    ``values`` is (B, n_scalar) normalized scalars, ``patches`` is
    (B, n_patch, patch_dim) from the self-normalized image, ``vis`` is the
    (B, V) visible-index matrix (V identical across the batch).
    """
    stages = stage_list(cfg)
    if start not in stages:
        raise ValueError(f"unknown stage {start!r}")
    tape = Tape(start=start, vis=vis)
    s = cfg.layout.n_scalar
    b = vis.shape[0]
    rows = np.arange(b)[:, None]
    dtype = params["embed.scalar"].dtype

    x = carry
    for stage in stages[stages.index(start):]:
        if stage == "embed":
            scal = values[:, :, None] * params["embed.scalar"][None] \
                + params["enc.pos_scalar"][None]
            if cfg.layout.n_patch:
                enc_patch_pos = sinusoidal_pos_2d(cfg.grid_h, cfg.grid_w,
                                                  cfg.enc_dim).astype(dtype)
                pat = patches @ params["embed.patch"] + enc_patch_pos[None]
                tokens = np.concatenate([scal, pat], axis=1)
            else:
                tokens = scal
            x = tokens[rows, vis]
            tape.caches[stage] = (None, values, patches)
        elif stage.startswith("enc."):
            inp = x
            if vis.shape[1]:
                x, cache = block_fwd(x, params, stage, cfg.n_heads)
            else:
                cache = None
            tape.caches[stage] = (inp, cache)
        elif stage == "bridge":
            inp = x
            if vis.shape[1]:
                normed, nc = layernorm_fwd(x, params["enc.norm.g"], params["enc.norm.b"])
                bridged, bc = linear_fwd(normed, params["bridge.w"], params["bridge.b"])
            else:
                normed = nc = bc = None
                bridged = np.zeros((b, 0, cfg.dec_dim), dtype=dtype)
            full = np.tile(params["dec.mask_token"], (b, cfg.layout.total, 1))
            full[rows, vis] = bridged
            full[:, :s] += params["dec.pos_scalar"][None]
            if cfg.layout.n_patch:
                dec_patch_pos = sinusoidal_pos_2d(cfg.grid_h, cfg.grid_w,
                                                  cfg.dec_dim).astype(dtype)
                full[:, s:] += dec_patch_pos[None]
            x = full
            tape.caches[stage] = (inp, nc, bc)
        elif stage.startswith("dec."):
            inp = x
            x, cache = block_fwd(x, params, stage, cfg.n_heads)
            tape.caches[stage] = (inp, cache)
        else:  # head
            inp = x
            normed, nc = layernorm_fwd(x, params["dec.norm.g"], params["dec.norm.b"])
            tape.pred_scalar = np.einsum("bsd,sd->bs", normed[:, :s], params["head.scalar"])
            if cfg.layout.n_patch:
                tape.pred_patch = normed[:, s:] @ params["head.patch"]
            else:
                tape.pred_patch = np.zeros((b, 0, cfg.patch_dim), dtype=dtype)
            tape.features = normed
            tape.caches[stage] = (inp, nc)
    return tape


def run_backward(params: dict, cfg: ModelConfig, tape: Tape,
                 d_scalar: np.ndarray, d_patch: np.ndarray,
                 needed: set[str] | None = None) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss given its gradient w.r.t. the
    predictions.  When ``needed`` is given, propagation stops after the
    earliest stage containing a needed parameter; only stages at or after
    ``tape.start`` may be requested."""
    stages = stage_list(cfg)
    if needed is None:
        stop_idx = stages.index(tape.start)
    else:
        stop_idx = min(stages.index(param_stage(n, cfg)) for n in needed)
        if stop_idx < stages.index(tape.start):
            raise ValueError("requested gradients upstream of the forward start stage")

    s = cfg.layout.n_scalar
    vis = tape.vis
    b = vis.shape[0]
    rows = np.arange(b)[:, None]
    grads: dict[str, np.ndarray] = {}
    dx = None

    for idx in range(len(stages) - 1, stop_idx - 1, -1):
        stage = stages[idx]
        if stage == "head":
            inp, nc = tape.caches[stage]
            normed = tape.features
            dnormed = np.zeros_like(normed)
            dnormed[:, :s] = d_scalar[:, :, None] * params["head.scalar"][None]
            grads["head.scalar"] = np.einsum("bs,bsd->sd", d_scalar, normed[:, :s])
            if cfg.layout.n_patch:
                dnormed[:, s:] = d_patch @ params["head.patch"].T
                grads["head.patch"] = np.einsum("bpd,bpq->dq", normed[:, s:], d_patch)
            else:
                grads["head.patch"] = np.zeros_like(params["head.patch"])
            dx, dg, db = layernorm_bwd(dnormed, nc)
            grads["dec.norm.g"], grads["dec.norm.b"] = dg, db
        elif stage.startswith("dec."):
            inp, cache = tape.caches[stage]
            dx = block_bwd(dx, cache, grads, stage, cfg.n_heads)
        elif stage == "bridge":
            inp, nc, bc = tape.caches[stage]
            grads["dec.pos_scalar"] = dx[:, :s].sum(axis=0)
            dvis_slots = dx[rows, vis]
            total = dx.sum(axis=(0, 1))
            grads["dec.mask_token"] = total - dvis_slots.sum(axis=(0, 1))
            if vis.shape[1]:
                dnormed, dw, db = linear_bwd(dvis_slots, bc)
                grads["bridge.w"], grads["bridge.b"] = dw, db
                dx, dg, db2 = layernorm_bwd(dnormed, nc)
                grads["enc.norm.g"], grads["enc.norm.b"] = dg, db2
            else:
                for name in ("bridge.w", "bridge.b", "enc.norm.g", "enc.norm.b"):
                    grads[name] = np.zeros_like(params[name])
                dx = np.zeros((b, 0, cfg.enc_dim), dtype=dx.dtype)
        elif stage.startswith("enc."):
            inp, cache = tape.caches[stage]
            if vis.shape[1]:
                dx = block_bwd(dx, cache, grads, stage, cfg.n_heads)
            else:
                for name, _ in param_manifest(cfg):
                    if name.startswith(stage + "."):
                        grads[name] = np.zeros_like(params[name])
        else:  # embed
            _, values, patches = tape.caches[stage]
            t = cfg.layout.total
            dtokens = np.zeros((b, t, cfg.enc_dim), dtype=dx.dtype)
            dtokens[rows, vis] = dx
            dscal = dtokens[:, :s]
            grads["embed.scalar"] = np.einsum("bs,bsd->sd", values, dscal)
            grads["enc.pos_scalar"] = dscal.sum(axis=0)
            if cfg.layout.n_patch:
                grads["embed.patch"] = np.einsum("bpq,bpd->qd", patches, dtokens[:, s:])
            else:
                grads["embed.patch"] = np.zeros_like(params["embed.patch"])

    if needed is not None:
        grads = {k: v for k, v in grads.items() if k in needed}
    return grads


# ---------------------------------------------------------------------------
# Model container


@dataclass
class Predictions:
    """Per-token predictions for a batch, covering visible and masked tokens."""

    scalars: np.ndarray   # (B, n_scalar)
    patches: np.ndarray   # (B, n_patch, patch_dim)
    n_input: int
    cfg: ModelConfig | None = None

    @property
    def xhat(self) -> np.ndarray:
        return self.scalars[:, : self.n_input]

    @property
    def ohat(self) -> np.ndarray:
        return self.scalars[:, self.n_input:]

    def image(self) -> np.ndarray:
        return unpatchify(self.patches, self.cfg)


@dataclass
class SurrogateModel:
    """Parameter container plus everything needed to run it."""

    cfg: ModelConfig
    params: dict[str, np.ndarray]
    norm: NormStats | None = None
    provenance: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: int, dtype=np.float32,
                   norm: NormStats | None = None) -> "SurrogateModel":
        return cls(cfg, init_params(cfg, seed, dtype=dtype), norm=norm,
                   provenance={"init_seed": seed})

    def copy(self) -> "SurrogateModel":
        return SurrogateModel(self.cfg, {k: v.copy() for k, v in self.params.items()},
                              self.norm, dict(self.provenance))

    def astype(self, dtype) -> "SurrogateModel":
        return SurrogateModel(self.cfg,
                              {k: v.astype(dtype) for k, v in self.params.items()},
                              self.norm, dict(self.provenance))

    def forward(self, batch: Batch, mask: TokenMask,
                return_features: bool = False):
        """Predictions for every token given a batch and a shared mask."""
        if mask.layout != self.cfg.layout:
            raise DimensionError("mask layout does not match model config")
        values = scalar_values(batch)
        patches = patchify(batch.img, self.cfg)
        vis = tile_mask(mask, len(batch))
        tape = run_forward(self.params, self.cfg, values, patches, vis)
        preds = Predictions(tape.pred_scalar, tape.pred_patch,
                            self.cfg.layout.n_input, self.cfg)
        if return_features:
            return preds, tape.features
        return preds

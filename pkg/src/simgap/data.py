"""Datasets, normalization, persistence, and the synthetic gap benchmark.

A dataset couples three modalities per record: a vector of raw input
scalars, a vector of raw output scalars, and a non-negative intensity
image.  Scalars are min-max normalized with statistics computed on the
source domain; images are self-normalized (divided by their own mean) so
each has unit mean regardless of its absolute intensity scale.

The synthetic benchmark manufactures a controllable source/target gap:
the source samples inputs uniformly over the unit cube and pushes them
through a fixed analytic forward map; the target restricts four input
dimensions to 0.5 and adds a smooth output shift on two designated
channels plus a multiplicative warp of the image ellipticity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptDatasetError,
    DegenerateImageError,
    DimensionError,
    MissingManifestError,
)
from .seeding import rng

D_IN = 9
D_OUT = 10

# Input dimensions pinned to 0.5 when sampling the target slice (0-based).
TARGET_FIXED_DIMS = (1, 2, 5, 7)
# Output channels the task shift acts on ("asymmetry/preheat analogs").
SHIFTED_CHANNELS = (3, 6)


# ---------------------------------------------------------------------------
# Core types


@dataclass(frozen=True)
class NormStats:
    """Per-scalar min/max in raw units, computed on the source split.
    Immutable once constructed."""

    x_min: np.ndarray
    x_max: np.ndarray
    o_min: np.ndarray
    o_max: np.ndarray

    def __post_init__(self):
        for name in ("x_min", "x_max", "o_min", "o_max"):
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if np.any(self.x_max < self.x_min) or np.any(self.o_max < self.o_min):
            raise ValueError("max must be >= min for every scalar")

    @classmethod
    def from_arrays(cls, x: np.ndarray, o: np.ndarray) -> "NormStats":
        return cls(
            x_min=x.min(axis=0), x_max=x.max(axis=0),
            o_min=o.min(axis=0), o_max=o.max(axis=0),
        )

    def normalize_x(self, x: np.ndarray) -> np.ndarray:
        return normalize_minmax(x, self.x_min, self.x_max)

    def normalize_o(self, o: np.ndarray) -> np.ndarray:
        return normalize_minmax(o, self.o_min, self.o_max)

    def denormalize_o(self, o_norm: np.ndarray) -> np.ndarray:
        span = (self.o_max - self.o_min).astype(np.float64)
        return np.asarray(o_norm, dtype=np.float64) * span + self.o_min

    def to_dict(self) -> dict:
        return {
            "x_min": [float(v) for v in self.x_min],
            "x_max": [float(v) for v in self.x_max],
            "o_min": [float(v) for v in self.o_min],
            "o_max": [float(v) for v in self.o_max],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NormStats":
        return cls(*(np.array(obj[k], dtype=np.float32)
                     for k in ("x_min", "x_max", "o_min", "o_max")))

    def __eq__(self, other) -> bool:
        if not isinstance(other, NormStats):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("x_min", "x_max", "o_min", "o_max")
        )


@dataclass(frozen=True)
class MultiModalSample:
    """One record: raw input scalars, raw output scalars, intensity image."""

    x: np.ndarray
    o: np.ndarray
    img: np.ndarray


@dataclass
class Dataset:
    """An ordered collection of samples with shared dimensions.

    Arrays are stored stacked (sample-major) and are read-only after
    construction, so a dataset is safe to share across workers.
    """

    x: np.ndarray        # (n, d_in) float32, raw
    o: np.ndarray        # (n, d_out) float32, raw
    img: np.ndarray      # (n, H, W) float32, raw intensity
    domain: str          # "source" | "target"
    seed: int
    norm: NormStats

    def __post_init__(self):
        if self.domain not in ("source", "target"):
            raise ValueError(f"domain must be 'source' or 'target', got {self.domain!r}")
        for name in ("x", "o", "img"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            arr.flags.writeable = False
            setattr(self, name, arr)
        n = self.x.shape[0]
        if self.o.shape[0] != n or self.img.shape[0] != n:
            raise DimensionError("sample counts differ across modalities")
        if self.x.ndim != 2 or self.o.ndim != 2 or self.img.ndim != 3:
            raise DimensionError("expected x (n,d_in), o (n,d_out), img (n,H,W)")

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> MultiModalSample:
        return MultiModalSample(self.x[i], self.o[i], self.img[i])

    @property
    def d_in(self) -> int:
        return self.x.shape[1]

    @property
    def d_out(self) -> int:
        return self.o.shape[1]

    @property
    def img_shape(self) -> tuple[int, int]:
        return self.img.shape[1], self.img.shape[2]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.x[idx], self.o[idx], self.img[idx],
                       self.domain, self.seed, self.norm)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.domain == other.domain
            and self.seed == other.seed
            and self.norm == other.norm
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.o, other.o)
            and np.array_equal(self.img, other.img)
        )


# ---------------------------------------------------------------------------
# Normalization


def normalize_minmax(values: np.ndarray, vmin: np.ndarray, vmax: np.ndarray) -> np.ndarray:
    """Map each component through (v - min) / (max - min), clamped to [0, 1].

    Degenerate scalars (max == min) map to 0.5 so a constant channel still
    produces a mid-range token instead of a zero one.
    """
    values = np.asarray(values, dtype=np.float64)
    vmin = np.asarray(vmin, dtype=np.float64)
    vmax = np.asarray(vmax, dtype=np.float64)
    if values.shape[-1] != vmin.shape[-1] or vmin.shape != vmax.shape:
        raise DimensionError(
            f"vector length {values.shape[-1]} does not match stats length {vmin.shape[-1]}"
        )
    span = vmax - vmin
    degenerate = span == 0
    safe_span = np.where(degenerate, 1.0, span)
    out = (values - vmin) / safe_span
    out = np.where(degenerate, 0.5, out)
    return np.clip(out, 0.0, 1.0)


def self_normalize_image(img: np.ndarray) -> np.ndarray:
    """Divide an image by its own mean so the result has mean exactly 1."""
    img = np.asarray(img, dtype=np.float64)
    mean = img.mean()
    if not mean > 0:
        raise DegenerateImageError(
            f"image mean must be strictly positive to self-normalize (got {mean})"
        )
    return img / mean


@dataclass(frozen=True)
class Batch:
    """Model-ready normalized arrays for a set of samples."""

    x: np.ndarray    # (n, d_in) in [0, 1]
    o: np.ndarray    # (n, d_out) in [0, 1]
    img: np.ndarray  # (n, H, W), each image has mean 1

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, indices) -> "Batch":
        idx = np.asarray(indices, dtype=int)
        return Batch(self.x[idx], self.o[idx], self.img[idx])


def to_model_batch(ds: Dataset, stats: NormStats | None = None,
                   dtype=np.float32) -> Batch:
    """Normalize a dataset into model space: min-max scalars (source stats),
    per-image self-normalization."""
    stats = stats if stats is not None else ds.norm
    x = stats.normalize_x(ds.x).astype(dtype)
    o = stats.normalize_o(ds.o).astype(dtype)
    img = np.stack([self_normalize_image(im) for im in ds.img]).astype(dtype)
    return Batch(x, o, img)


# ---------------------------------------------------------------------------
# Synthetic benchmark
#
# The forward map g: [0,1]^9 -> R^10 below is a fixed, documented closed
# form: sums, products, one sigmoid channel (o2) and quadratic channels
# (o3, o5, o9).  The image is a radial blob whose ellipticity, amplitude,
# and radius are driven by outputs o0, o1, o2.


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def forward_map(x: np.ndarray) -> np.ndarray:
    """The analytic output-scalar map g(x); x is (n, 9), result (n, 10)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != D_IN:
        raise DimensionError(f"forward map expects (n, {D_IN}) inputs")
    c = [x[:, i] for i in range(D_IN)]
    o = np.empty((x.shape[0], D_OUT), dtype=np.float64)
    o[:, 0] = c[0] + c[1] - c[2]
    o[:, 1] = c[0] * c[3] + 0.5 * c[4]
    o[:, 2] = _sigmoid(4.0 * (c[5] - 0.5)) + 0.5 * c[3]
    o[:, 3] = (c[6] - 0.3) ** 2 + c[7] * c[8]
    o[:, 4] = 0.5 * (c[1] + c[4]) + c[2] * c[5]
    o[:, 5] = (c[3] + c[8] - 1.0) ** 2 + 0.25 * c[1]
    o[:, 6] = c[2] + c[6] * c[7]
    o[:, 7] = c[0] * c[8] + c[5] * (1.0 - c[3])
    o[:, 8] = 0.25 * (c[0] + c[1] + c[2] + c[3]) + c[4] * c[6]
    o[:, 9] = (c[4] - 0.5) ** 2 + 0.5 * c[7] + 0.25 * c[6]
    return o


def task_shift(x: np.ndarray, shift_strength: float) -> np.ndarray:
    """The additive output shift Delta(x) scaled by the shift strength.

    Only the two designated channels are shifted; both components carry a
    strong mean offset plus a smooth dependence on free input dimensions,
    so the gap is partly correctable by a bias term and partly state
    dependent.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = np.zeros((x.shape[0], D_OUT), dtype=np.float64)
    delta[:, SHIFTED_CHANNELS[0]] = 0.45 + 0.25 * (x[:, 4] - 0.5)
    delta[:, SHIFTED_CHANNELS[1]] = -0.40 + 0.30 * (x[:, 0] * x[:, 8] - 0.25)
    return shift_strength * delta


def ellipticity_warp(x: np.ndarray, shift_strength: float) -> np.ndarray:
    """Multiplicative factor applied to the image ellipticity on the target
    domain; equals 1 when the shift strength is 0."""
    x = np.asarray(x, dtype=np.float64)
    return 1.0 + shift_strength * (0.8 + 0.4 * (x[:, 6] - 0.5))


def render_images(o: np.ndarray, img_size: int,
                  ell_factor: np.ndarray | None = None) -> np.ndarray:
    """Render radial intensity blobs from output scalars.

    Ellipticity, amplitude, and radius are smooth functions of o0, o1, o2.
    Every pixel is strictly positive (Gaussian profile plus a small floor),
    so self-normalization is always defined.
    """
    o = np.asarray(o, dtype=np.float64)
    n = o.shape[0]
    if ell_factor is None:
        ell_factor = np.ones(n)
    ell = 0.35 * np.tanh(o[:, 0] - 0.5) * ell_factor
    ell = np.clip(ell, -0.6, 0.6)
    amp = 1.0 + 2.0 * np.clip(o[:, 1] / 1.5, 0.0, 1.0)
    radius = 0.25 + 0.30 * np.clip(o[:, 2] - 0.25, 0.0, 1.0)

    coords = (np.arange(img_size) + 0.5) / img_size * 2.0 - 1.0
    v, u = np.meshgrid(coords, coords, indexing="ij")
    a = radius * (1.0 + ell)
    b = radius * (1.0 - ell)
    r2 = (u[None] / a[:, None, None]) ** 2 + (v[None] / b[:, None, None]) ** 2
    return amp[:, None, None] * np.exp(-r2) + 0.02


def gen_synthetic_benchmark(seed: int, n_source: int, n_target: int,
                            shift_strength: float,
                            img_size: int = 24) -> tuple[Dataset, Dataset]:
    """Generate a (source, target) dataset pair with a controllable gap.

    Source: x ~ uniform [0,1]^9, outputs g(x).  Target: four designated
    input dims fixed to 0.5, the rest uniform; outputs g(x) + shift.
    Deterministic given the seed.
    """
    if n_source < 1 or n_target < 1:
        raise ValueError("n_source and n_target must be >= 1")
    if not 0.0 <= shift_strength <= 1.0:
        raise ValueError(f"shift_strength must lie in [0, 1], got {shift_strength}")

    x_s = rng(seed, "source_inputs").uniform(0.0, 1.0, size=(n_source, D_IN))
    o_s = forward_map(x_s)
    img_s = render_images(o_s, img_size)

    x_t = rng(seed, "target_inputs").uniform(0.0, 1.0, size=(n_target, D_IN))
    x_t[:, list(TARGET_FIXED_DIMS)] = 0.5
    o_t = forward_map(x_t) + task_shift(x_t, shift_strength)
    img_t = render_images(forward_map(x_t), img_size,
                          ell_factor=ellipticity_warp(x_t, shift_strength))

    stats = NormStats.from_arrays(x_s.astype(np.float32), o_s.astype(np.float32))
    source = Dataset(x_s, o_s, img_s, "source", seed, stats)
    target = Dataset(x_t, o_t, img_t, "target", seed, stats)
    return source, target


# ---------------------------------------------------------------------------
# Persistence
#
# Directory layout: manifest.json, inputs.csv, outputs.csv, images.bin
# (float32 little-endian, sample-major then row-major).  Scalars are
# written as decimal text with 9 significant digits, which round-trips
# float32 exactly.


def _format_row(row: np.ndarray) -> str:
    return ",".join(f"{float(v):.9g}" for v in row)


def _write_csv(path: Path, header: list[str], data: np.ndarray) -> None:
    lines = [",".join(header)]
    lines.extend(_format_row(row) for row in data)
    path.write_text("\n".join(lines) + "\n")


def _read_csv(path: Path, expect_cols: int) -> np.ndarray:
    lines = path.read_text().splitlines()
    if not lines:
        raise CorruptDatasetError(f"{path} is empty")
    rows = []
    for line in lines[1:]:
        fields = line.split(",")
        if len(fields) != expect_cols:
            raise CorruptDatasetError(
                f"{path}: expected {expect_cols} columns, got {len(fields)}"
            )
        rows.append([np.float32(f) for f in fields])
    return np.array(rows, dtype=np.float32).reshape(len(rows), expect_cols)


def save_dataset(ds: Dataset, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    h, w = ds.img_shape
    manifest = {
        "n": len(ds),
        "d_in": ds.d_in,
        "d_out": ds.d_out,
        "img_h": h,
        "img_w": w,
        "domain": ds.domain,
        "seed": ds.seed,
        "norm": ds.norm.to_dict(),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    _write_csv(directory / "inputs.csv",
               [f"x{i + 1}" for i in range(ds.d_in)], ds.x)
    _write_csv(directory / "outputs.csv",
               [f"o{i + 1}" for i in range(ds.d_out)], ds.o)
    (directory / "images.bin").write_bytes(
        np.ascontiguousarray(ds.img, dtype="<f4").tobytes()
    )


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise MissingManifestError(f"no manifest.json in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptDatasetError(f"unreadable manifest: {exc}") from exc

    try:
        n = int(manifest["n"])
        d_in, d_out = int(manifest["d_in"]), int(manifest["d_out"])
        h, w = int(manifest["img_h"]), int(manifest["img_w"])
        domain, seed = manifest["domain"], int(manifest["seed"])
        norm = NormStats.from_dict(manifest["norm"])
    except (KeyError, TypeError) as exc:
        raise CorruptDatasetError(f"manifest missing field: {exc}") from exc

    x = _read_csv(directory / "inputs.csv", d_in)
    o = _read_csv(directory / "outputs.csv", d_out)
    if x.shape[0] != n or o.shape[0] != n:
        raise CorruptDatasetError(
            f"manifest says n={n} but inputs has {x.shape[0]} rows "
            f"and outputs has {o.shape[0]}"
        )
    raw = (directory / "images.bin").read_bytes()
    expected = n * h * w * 4
    if len(raw) != expected:
        raise CorruptDatasetError(
            f"images.bin has {len(raw)} bytes, expected {expected}"
        )
    img = np.frombuffer(raw, dtype="<f4").reshape(n, h, w)
    return Dataset(x, o, img, domain, seed, norm)

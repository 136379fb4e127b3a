"""Dataset generation, IDX loading, CSV round trips, and crop/flip augmentation.

All features live in the unit hypercube [0, 1]^d. Synthetic layouts are 2-D
(two interleaved arcs, Gaussian blobs on a ring); image data comes from IDX
files and keeps its height x width x channels shape descriptor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    IdxBadMagicError,
    IdxCountMismatchError,
    IdxTruncatedError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

SYNTHETIC_LAYOUTS = ("two_arcs", "gaussian_blobs")


@dataclass(frozen=True)
class LabeledExample:
    """One input vector with its class label and shape descriptor."""

    features: np.ndarray  # flat float64, every component in [0, 1]
    label: int
    shape: tuple[int, ...] = ()

    def __post_init__(self):
        if self.shape == ():
            object.__setattr__(self, "shape", (self.features.size,))


@dataclass
class Dataset:
    """An ordered collection of examples sharing one input shape."""

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    num_classes: int
    input_shape: tuple[int, ...]
    split: str = "train"

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ContractError("features must be a (n, d) matrix")
        if len(self.features) != len(self.labels):
            raise ContractError("features and labels disagree on example count")
        if self.num_classes < 2:
            raise ContractError("a classification task needs at least 2 classes")
        if int(np.prod(self.input_shape)) != self.features.shape[1]:
            raise ContractError("input_shape does not match feature dimension")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError("labels out of range for num_classes")
        # datasets are shared read-only snapshots
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    def example(self, i: int) -> LabeledExample:
        return LabeledExample(self.features[i], int(self.labels[i]), self.input_shape)

    def examples(self):
        return [self.example(i) for i in range(len(self))]


@dataclass(frozen=True)
class AugmentConfig:
    """Random-crop (zero padding) and horizontal-flip settings for image data."""

    crop_padding: int = 4
    hflip_prob: float = 0.5
    enabled: bool = False

    def __post_init__(self):
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError("hflip_prob must lie in [0, 1]")
        if self.crop_padding < 0:
            raise ConfigError("crop_padding must be non-negative")


def _two_arcs(rng: np.random.Generator, n_per_class: int, num_classes: int, sigma: float):
    if num_classes != 2:
        raise ConfigError("two_arcs layout is a binary-class layout")
    blocks = []
    for cls in range(2):
        t = rng.uniform(0.0, np.pi, size=n_per_class)
        if cls == 0:
            raw = np.stack([np.cos(t), np.sin(t)], axis=1)
        else:
            raw = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        # noise acts in arc coordinates, where sigma has its usual meaning
        raw += sigma * rng.standard_normal(size=raw.shape)
        # fixed affine map of the nominal arcs box [-1,2]x[-0.5,1] into [0,1]^2
        pts = np.empty_like(raw)
        pts[:, 0] = (raw[:, 0] + 1.0) / 3.0
        pts[:, 1] = (raw[:, 1] + 0.5) / 1.5
        blocks.append(pts)
    return blocks


def _gaussian_blobs(rng: np.random.Generator, n_per_class: int, num_classes: int, sigma: float):
    blocks = []
    for cls in range(num_classes):
        angle = 2.0 * np.pi * cls / num_classes
        center = np.array([0.5 + 0.32 * np.cos(angle), 0.5 + 0.32 * np.sin(angle)])
        pts = center + sigma * rng.standard_normal(size=(n_per_class, 2))
        blocks.append(pts)
    return blocks


def generate_synthetic(
    seed: int,
    n_per_class: int,
    num_classes: int,
    layout: str = "two_arcs",
    noise_sigma: float = 0.1,
    split: str = "train",
) -> Dataset:
    """Generate a balanced 2-D dataset, deterministic for a fixed seed.

    Points are produced per class in class order and clipped into [0, 1]^2.
    """
    if n_per_class < 1:
        raise ConfigError("n_per_class must be at least 1 (a class would be empty)")
    if num_classes < 2:
        raise ConfigError("num_classes must be at least 2")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    if layout == "two_arcs":
        blocks = _two_arcs(rng, n_per_class, num_classes, noise_sigma)
    elif layout == "gaussian_blobs":
        blocks = _gaussian_blobs(rng, n_per_class, num_classes, noise_sigma)
    else:
        raise ConfigError(f"unknown synthetic layout {layout!r}")
    features = np.clip(np.concatenate(blocks, axis=0), 0.0, 1.0)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), n_per_class)
    return Dataset(features, labels, num_classes, (2,), split)


def split_dataset(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffle and partition into train/val/test by the given fractions."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("fractions must be three non-negative numbers summing to 1")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(fractions[0] * n))
    n_val = int(np.floor(fractions[1] * n))
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    out = []
    for idx, tag in zip(parts, ("train", "val", "test")):
        out.append(
            Dataset(
                dataset.features[idx].copy(),
                dataset.labels[idx].copy(),
                dataset.num_classes,
                dataset.input_shape,
                tag,
            )
        )
    return tuple(out)


def _read_exact(f, count: int, what: str) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise IdxTruncatedError(f"truncated IDX payload while reading {what}")
    return buf


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label file pair into a Dataset with pixels in [0, 1].

    Headers are big-endian 4-byte fields; image files carry magic 0x00000803
    (3-D unsigned-byte tensor) and label files 0x00000801.
    """
    with open(images_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, "image magic"))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxBadMagicError(
                f"bad magic 0x{magic:08x} in {images_path} (expected 0x{IDX_IMAGE_MAGIC:08x})"
            )
        n, rows, cols = struct.unpack(">III", _read_exact(f, 12, "image dimensions"))
        raw = _read_exact(f, n * rows * cols, "image pixels")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)

    with open(labels_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, "label magic"))
        if magic != IDX_LABEL_MAGIC:
            raise IdxBadMagicError(
                f"bad magic 0x{magic:08x} in {labels_path} (expected 0x{IDX_LABEL_MAGIC:08x})"
            )
        (n_labels,) = struct.unpack(">I", _read_exact(f, 4, "label count"))
        raw = _read_exact(f, n_labels, "labels")
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if n != n_labels:
        raise IdxCountMismatchError(f"{n} images but {n_labels} labels")
    features = pixels.astype(np.float64) / 255.0
    num_classes = max(2, int(labels.max()) + 1) if len(labels) else 2
    return Dataset(features, labels, num_classes, (rows, cols, 1), "train")


def write_idx(images_path: str, labels_path: str, dataset: Dataset) -> None:
    """Write a Dataset back to an IDX pair (pixels re-quantized to bytes)."""
    if len(dataset.input_shape) != 3:
        raise ContractError("write_idx needs image-shaped data")
    rows, cols, channels = dataset.input_shape
    if channels != 1:
        raise ContractError("IDX image files are single-channel")
    n = len(dataset)
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


def export_csv(path: str, dataset: Dataset) -> None:
    """Write `x0,x1,...,label` rows, one per example."""
    d = dataset.features.shape[1]
    header = ",".join([f"x{j}" for j in range(d)] + ["label"])
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for x, y in zip(dataset.features, dataset.labels):
            f.write(",".join(repr(float(v)) for v in x) + f",{int(y)}\n")


def load_csv(path: str, num_classes: int | None = None, split: str = "test") -> Dataset:
    """Read a dataset exported by :func:`export_csv` (comment lines ignored)."""
    rows = []
    with open(path, encoding="utf-8") as f:
        header = None
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                if header[-1] != "label" or not header[0].startswith("x"):
                    raise ConfigError(f"{path} does not look like an exported dataset CSV")
                continue
            rows.append(line.split(","))
    if not rows:
        raise ConfigError(f"no data rows in {path}")
    arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    features, labels = arr[:, :-1], arr[:, -1].astype(np.int64)
    if num_classes is None:
        num_classes = max(2, int(labels.max()) + 1)
    return Dataset(features, labels, num_classes, (features.shape[1],), split)


def augment(example: LabeledExample, config: AugmentConfig, rng: np.random.Generator) -> LabeledExample:
    """Random crop (zero padding, uniform corner) then horizontal flip.

    Label and shape are preserved; with augmentation disabled the example
    passes through unchanged.
    """
    if not config.enabled:
        return example
    if len(example.shape) != 3:
        raise ConfigError("augmentation is defined for image-shaped examples only")
    h, w, c = example.shape
    img = example.features.reshape(h, w, c)
    p = config.crop_padding
    if p > 0:
        padded = np.zeros((h + 2 * p, w + 2 * p, c), dtype=np.float64)
        padded[p : p + h, p : p + w, :] = img
        top, left = rng.integers(0, 2 * p + 1, size=2)
        img = padded[top : top + h, left : left + w, :]
    if rng.random() < config.hflip_prob:
        img = img[:, ::-1, :]
    return LabeledExample(np.ascontiguousarray(img).reshape(-1), example.label, example.shape)


def augment_batch(
    X: np.ndarray, shape: tuple[int, ...], config: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """Apply :func:`augment` to each row of a batch; identity when disabled."""
    if not config.enabled:
        return X
    out = np.empty_like(X)
    for i in range(len(X)):
        out[i] = augment(LabeledExample(X[i], 0, shape), config, rng).features
    return out

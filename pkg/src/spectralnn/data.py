"""Dataset ingestion and generation.

Supported inputs: IDX image/label containers (big-endian, magic 0x00000803
and 0x00000801), binary PGM/PPM (P5/P6 with maxval 255), central-pixel
labelled patches cut from a single annotated image, and a synthetic
"spectral" dataset of noisy diagonal sinusoids whose classes differ only in
frequency. Pixels are scaled to [0, 1]; per-channel standardization uses
train-split statistics only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, SplitError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Stacked samples of identical shape with integer class labels."""

    images: np.ndarray  # (n, C, H, W) float64
    labels: np.ndarray  # (n,) int64
    num_classes: int
    channel_mean: np.ndarray | None = None
    channel_std: np.ndarray | None = None
    positions: np.ndarray | None = None  # (n, 2) patch centers, when applicable

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n, C, H, W), got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError("image and label counts differ")
        if len(self.labels) and self.labels.max() >= self.num_classes:
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def sample_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def subset(self, indices: np.ndarray) -> "Dataset":
        # patch positions are not carried along; manifests are written pre-split
        return Dataset(
            self.images[indices],
            self.labels[indices],
            self.num_classes,
            self.channel_mean,
            self.channel_std,
        )


@dataclass(frozen=True)
class SplitSpec:
    train: float
    val: float
    test: float
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train, self.val, self.test)
        if any(f <= 0 for f in fracs):
            raise ValueError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")


def _read_exact(f, count: int, offset: int) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise ParseError(f"file truncated, wanted {count} bytes", offset=offset)
    return data


def _read_idx_header(f, expected_magic: int, n_dims: int, path: str) -> tuple[int, ...]:
    magic = struct.unpack(">I", _read_exact(f, 4, 0))[0]
    if magic != expected_magic:
        raise ParseError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0
        )
    dims = []
    for i in range(n_dims):
        dims.append(struct.unpack(">I", _read_exact(f, 4, 4 + 4 * i))[0])
    return tuple(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label file pair into a single-channel dataset."""
    with open(images_path, "rb") as f:
        count, rows, cols = _read_idx_header(f, IDX_IMAGES_MAGIC, 3, str(images_path))
        pixel_bytes = _read_exact(f, count * rows * cols, 16)
    with open(labels_path, "rb") as f:
        (label_count,) = _read_idx_header(f, IDX_LABELS_MAGIC, 1, str(labels_path))
        label_bytes = _read_exact(f, label_count, 8)
    if label_count != count:
        raise ParseError(
            f"{images_path} holds {count} images but {labels_path} holds "
            f"{label_count} labels",
            offset=4,
        )
    images = (
        np.frombuffer(pixel_bytes, dtype=np.uint8)
        .reshape(count, 1, rows, cols)
        .astype(np.float64)
        / 255.0
    )
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if count else 0
    return Dataset(images, labels, num_classes)


def _next_pnm_token(data: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comment lines
    while pos < len(data):
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of header", offset=start)
    return data[start:pos], pos


def load_pnm(path) -> np.ndarray:
    """Decode a binary PGM (P5) or PPM (P6) file into a (C, H, W) array in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    magic, pos = _next_pnm_token(data, 0)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ParseError(f"{path}: unsupported magic {magic!r}", offset=0)
    fields = []
    for _ in range(3):
        token, pos = _next_pnm_token(data, pos)
        if not token.isdigit():
            raise ParseError(f"{path}: non-numeric header field {token!r}", offset=pos)
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise ParseError(f"{path}: only maxval 255 is supported, got {maxval}", offset=pos)
    pos += 1  # single whitespace byte after maxval
    expected = width * height * channels
    raster = data[pos : pos + expected]
    if len(raster) != expected:
        raise ParseError(
            f"{path}: raster holds {len(raster)} bytes, expected {expected}", offset=pos
        )
    pixels = np.frombuffer(raster, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return pixels.reshape(1, height, width)
    return pixels.reshape(height, width, 3).transpose(2, 0, 1)


def make_patch_dataset(
    image: np.ndarray, label_map: np.ndarray, patch: int, n: int, seed: int
) -> Dataset:
    """Cut n square patches at seeded positions, labelling each by the class
    of its central pixel."""
    if image.ndim == 2:
        image = image[None]
    c, h, w = image.shape
    if label_map.shape != (h, w):
        raise ValueError("label map must match the image spatially")
    if patch % 2 == 0:
        raise ValueError("patch size must be odd")
    if patch > h or patch > w:
        raise ValueError("patch does not fit inside the image")
    if n < 1:
        raise ValueError("need at least one patch")
    r = patch // 2
    rng = np.random.default_rng(seed)
    ys = rng.integers(r, h - r, size=n)
    xs = rng.integers(r, w - r, size=n)
    samples = np.stack(
        [image[:, y - r : y + r + 1, x - r : x + r + 1] for y, x in zip(ys, xs)]
    )
    labels = label_map[ys, xs].astype(np.int64)
    positions = np.stack([xs, ys], axis=1)
    return Dataset(
        samples.astype(np.float64), labels, int(label_map.max()) + 1, positions=positions
    )


def write_patch_manifest(dataset: Dataset, path) -> None:
    """CSV of patch provenance: ``index,x,y,label`` per sample."""
    if dataset.positions is None:
        raise ValueError("dataset carries no patch positions")
    lines = ["index,x,y,label"]
    for i, ((x, y), label) in enumerate(zip(dataset.positions, dataset.labels)):
        lines.append(f"{i},{x},{y},{label}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def spectral_sample(class_idx: int, size: int, phase: float) -> np.ndarray:
    """Noise-free diagonal sinusoid of frequency class_idx + 1 on a size x size grid."""
    coords = np.arange(size)
    diag = coords[:, None] + coords[None, :]
    return np.sin(2.0 * np.pi * (class_idx + 1) * diag / size + phase)


def make_spectral_dataset(
    n: int, classes: int, size: int, noise_sigma: float, seed: int
) -> Dataset:
    """Synthetic single-channel dataset whose classes are sinusoid frequencies.

    Each sample is sin(2*pi*f_k*(x+y)/size + phi) with f_k = class + 1, a
    per-sample random phase, and i.i.d. Gaussian pixel noise.
    """
    if size % 2:
        raise ValueError("size must be even")
    if classes > size // 2:
        raise ValueError(f"at most size/2 = {size // 2} classes are separable")
    if classes < 1 or n < 1:
        raise ValueError("need at least one class and one sample")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % classes
    images = np.empty((n, 1, size, size))
    for i, k in enumerate(labels):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        img = spectral_sample(int(k), size, phase)
        if noise_sigma > 0:
            img = img + rng.normal(0.0, noise_sigma, size=(size, size))
        images[i, 0] = img
    return Dataset(images, labels, classes)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle followed by a train/val/test partition.

    Every class must land in the train part; otherwise a
    :class:`SplitError` suggests changing the seed or fractions.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_val = int(np.floor(n * spec.val))
    n_test = int(np.floor(n * spec.test))
    n_train = n - n_val - n_test
    train_idx = order[:n_train]
    val_idx = order[n_train : n_train + n_val]
    test_idx = order[n_train + n_val :]
    train = dataset.subset(train_idx)
    present = np.unique(train.labels)
    if len(present) != dataset.num_classes:
        missing = sorted(set(range(dataset.num_classes)) - set(present.tolist()))
        raise SplitError(
            f"classes {missing} missing from the train split; "
            "try another seed or larger train fraction"
        )
    return train, dataset.subset(val_idx), dataset.subset(test_idx)


def standardize(
    train: Dataset, *others: Dataset
) -> tuple[Dataset, ...]:
    """Per-channel standardization with statistics from the train split only."""
    mean = train.images.mean(axis=(0, 2, 3))
    std = train.images.std(axis=(0, 2, 3))
    std = np.where(std == 0.0, 1.0, std)

    def apply(ds: Dataset) -> Dataset:
        images = (ds.images - mean[None, :, None, None]) / std[None, :, None, None]
        return Dataset(images, ds.labels.copy(), ds.num_classes, mean.copy(), std.copy())

    return tuple(apply(ds) for ds in (train, *others))

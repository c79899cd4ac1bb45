"""Dataset loading (MNIST IDX, CIFAR-10 binary), synthetic fixtures, batching.

Loaders are strict: every header field is validated and violations raise
FormatError with the byte offset, never silently wrong data. Pixels are
scaled by 1/255 into [0, 1]; no mean-centering.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import Rng, derive_seed

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 32*32*3 channel-planar pixels


class FormatError(ValueError):
    """A dataset file violates its published binary format."""


@dataclass
class Dataset:
    images: np.ndarray   # (n, H, W, c) float64 in [0, 1]
    labels: np.ndarray   # (n,) int64, values in [0, num_classes)
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(f"{len(self.images)} images vs {len(self.labels)} labels")

    def __len__(self):
        return len(self.images)

    def subset(self, n):
        """Deterministic prefix slice (used for desk-scale runs)."""
        n = min(int(n), len(self))
        return Dataset(self.images[:n], self.labels[:n], self.num_classes, self.split)


def one_hot(labels, num_classes):
    labels = np.asarray(labels)
    out = np.zeros((labels.size, num_classes), dtype=np.float64)
    out[np.arange(labels.size), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# MNIST IDX


def _read_be32(data, offset, path, what):
    if offset + 4 > len(data):
        raise FormatError(f"{path}: truncated reading {what} at offset {offset}")
    return struct.unpack_from(">I", data, offset)[0]


def load_idx(images_path, labels_path, num_classes=10, split="train"):
    """Parse an IDX image/label file pair into a Dataset.

    Big-endian headers; image magic 2051, label magic 2049. Image and label
    counts must agree and every label must be below num_classes.
    """
    with open(images_path, "rb") as f:
        raw = f.read()
    magic = _read_be32(raw, 0, images_path, "magic")
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{images_path}: bad image magic {magic} at offset 0 "
                          f"(expected {IDX_IMAGE_MAGIC})")
    count = _read_be32(raw, 4, images_path, "count")
    rows = _read_be32(raw, 8, images_path, "rows")
    cols = _read_be32(raw, 12, images_path, "cols")
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise FormatError(f"{images_path}: {len(raw)} bytes, expected {expected} "
                          f"(truncation at offset {min(len(raw), expected)})")
    images = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows, cols, 1)

    with open(labels_path, "rb") as f:
        raw_l = f.read()
    magic_l = _read_be32(raw_l, 0, labels_path, "magic")
    if magic_l != IDX_LABEL_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic {magic_l} at offset 0 "
                          f"(expected {IDX_LABEL_MAGIC})")
    count_l = _read_be32(raw_l, 4, labels_path, "count")
    if len(raw_l) != 8 + count_l:
        raise FormatError(f"{labels_path}: {len(raw_l)} bytes, expected {8 + count_l} "
                          f"(truncation at offset {min(len(raw_l), 8 + count_l)})")
    if count_l != count:
        raise FormatError(f"count mismatch: {images_path} has {count} images, "
                          f"{labels_path} has {count_l} labels")
    labels = np.frombuffer(raw_l, dtype=np.uint8, offset=8).astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise FormatError(f"{labels_path}: label {labels[bad[0]]} >= {num_classes} "
                          f"at offset {8 + int(bad[0])}")
    return Dataset(images.astype(np.float64) / 255.0, labels, num_classes, split)


def write_idx(images_path, labels_path, images, labels):
    """Write uint8 images (n, H, W) or (n, H, W, 1) and labels as IDX files.

    Test-fixture counterpart of load_idx; byte-exact per the format.
    """
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim == 4:
        images = images[..., 0]
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    labels = np.asarray(labels, dtype=np.uint8)
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.size))
        f.write(labels.tobytes())


# ---------------------------------------------------------------------------
# CIFAR-10 binary


def load_cifar10(batch_paths, split="train"):
    """Parse CIFAR-10 binary batches: 3073-byte records, label then R,G,B planes."""
    if isinstance(batch_paths, (str, bytes)):
        batch_paths = [batch_paths]
    images, labels = [], []
    for path in batch_paths:
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise FormatError(f"{path}: {len(raw)} bytes is not a multiple of "
                              f"{CIFAR_RECORD_BYTES}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        batch_labels = records[:, 0].astype(np.int64)
        bad = np.flatnonzero(batch_labels >= 10)
        if bad.size:
            raise FormatError(f"{path}: label {batch_labels[bad[0]]} >= 10 in record "
                              f"{int(bad[0])} (offset {int(bad[0]) * CIFAR_RECORD_BYTES})")
        pixels = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        images.append(pixels)
        labels.append(batch_labels)
    images = np.concatenate(images).astype(np.float64) / 255.0
    return Dataset(images, np.concatenate(labels), 10, split)


def write_cifar10(path, images, labels):
    """Write uint8 (n, 32, 32, 3) images + labels as one CIFAR-10 binary batch."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    planar = images.transpose(0, 3, 1, 2).reshape(len(images), -1)
    with open(path, "wb") as f:
        for label, pix in zip(labels, planar):
            f.write(bytes([int(label)]))
            f.write(pix.tobytes())


# ---------------------------------------------------------------------------
# synthetic fixtures


def make_toy_dataset(rng, n, kind="two_gaussians", split="train"):
    """Small 2-feature fixtures.

    two_gaussians: classes centered at (-1,-1) and (+1,+1); per-axis noise is
    clipped to +/-0.9, under half the diagonal center gap, so the classes are
    linearly separable by construction, not just with high probability.
    xor: four equal-size clusters on the unit square corners with diagonal
    classes equal; noise is clipped tightly enough that no linear separator
    can beat 3 of the 4 clusters (accuracy 0.75).
    """
    if n < 4:
        raise ValueError(f"make_toy_dataset: n must be >= 4, got {n}")
    labels = np.arange(n) % 2
    if kind == "two_gaussians":
        centers = np.where(labels[:, None] == 0, -1.0, 1.0) * np.ones((n, 2))
        noise = np.clip(rng.normal(0.0, 0.35, size=(n, 2)), -0.9, 0.9)
        points = centers + noise
    elif kind == "xor":
        corner = (np.arange(n) // 2) % 2  # balanced quarters per class
        x = np.where(corner == 0, labels, 1 - labels).astype(np.float64)
        y = np.where(corner == 0, 0.0, 1.0)
        noise = np.clip(rng.normal(0.0, 0.08, size=(n, 2)), -0.24, 0.24)
        points = np.stack([x, y], axis=1) + noise
    else:
        raise ValueError(f"make_toy_dataset: unknown kind {kind!r}")
    images = points.reshape(n, 1, 2, 1)  # (n, H=1, W=2, c=1) carrier
    images = (images - images.min()) / max(images.max() - images.min(), 1e-12)
    return Dataset(images, labels.astype(np.int64), 2, split)


def make_synthetic_digits(rng, n, side=28, num_classes=10, split="train"):
    """MNIST-shaped stand-in: per-class glyph prototypes, jittered samples.

    Prototypes are thresholded smooth random fields (stroke-like sparse
    shapes) softened with a box blur; they depend only on the base rng, so
    train and test splits built from the same seed share classes while the
    split tag drives independent sample jitter. Each sample is its class
    glyph shifted by up to +/-4 pixels, scaled by a random intensity and
    corrupted with Gaussian pixel noise, clipped back to [0, 1]. A small
    dense network learns this well past 0.9; a nearest-centroid or linear
    model does noticeably worse.
    """
    proto_rng = rng.child("prototypes")
    coarse = proto_rng.uniform(0.0, 1.0, size=(num_classes, 7, 7))
    protos = np.empty((num_classes, side, side))
    grid = np.linspace(0, 6, side)
    i0 = np.clip(np.floor(grid).astype(int), 0, 5)
    frac = grid - i0
    for c in range(num_classes):
        rows = (coarse[c][i0, :] * (1 - frac[:, None]) + coarse[c][i0 + 1, :] * frac[:, None])
        protos[c] = rows[:, i0] * (1 - frac[None, :]) + rows[:, i0 + 1] * frac[None, :]
    protos = (protos - protos.min()) / (protos.max() - protos.min())
    glyphs = np.where(protos > 0.55, 1.0, 0.0)
    soft = np.zeros_like(glyphs)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            soft += np.roll(np.roll(glyphs, dy, axis=1), dx, axis=2)
    glyphs = soft / 9.0

    labels = (np.arange(n) % num_classes).astype(np.int64)
    sample_rng = rng.child("samples", split)
    shifts = sample_rng.integers(-4, 5, size=(n, 2))
    intensity = sample_rng.uniform(0.6, 1.0, size=n)
    noise = sample_rng.normal(0.0, 0.40, size=(n, side, side))
    images = np.empty((n, side, side))
    for i in range(n):
        images[i] = np.roll(glyphs[labels[i]], (shifts[i, 0], shifts[i, 1]), axis=(0, 1))
    images = np.clip(images * intensity[:, None, None] + noise, 0.0, 1.0)
    return Dataset(images[..., None], labels, num_classes, split)


# ---------------------------------------------------------------------------
# batching


class BatchIterator:
    """Fixed-size minibatches; a fresh uniform shuffle every epoch.

    The permutation of epoch e comes from the child seed (seed, "shuffle", e),
    so iterator state is fully captured by the two ints (epoch, cursor). The
    short final batch is dropped: every batch holds exactly batch_size items.
    """

    def __init__(self, dataset, batch_size, seed, epoch=0, cursor=0):
        if batch_size < 1 or batch_size > len(dataset):
            raise ValueError(f"batch_size {batch_size} outside [1, {len(dataset)}]")
        self.dataset = dataset
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.epoch = int(epoch)
        self.cursor = int(cursor)
        self.permutation = self._permutation(self.epoch)

    def _permutation(self, epoch):
        return Rng(derive_seed(self.seed, "shuffle", epoch)).permutation(len(self.dataset))

    def state(self):
        return self.epoch, self.cursor

    def next_batch(self):
        """(images, one-hot labels); advances the cursor, reshuffling on wrap."""
        if self.cursor + self.batch_size > len(self.dataset):
            self.epoch += 1
            self.cursor = 0
            self.permutation = self._permutation(self.epoch)
        idx = self.permutation[self.cursor : self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return (self.dataset.images[idx],
                one_hot(self.dataset.labels[idx], self.dataset.num_classes))

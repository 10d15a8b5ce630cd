"""Datasets and sample generators.

Image side: an IDX (MNIST-format) reader, a corner-aligned bilinear resize to
32x32, and a deterministic synthetic stroke-image generator used as a
fallback when no IDX files are available (dataset download is out of scope).

Symbol side: BPSK batches over the lifted real dimension and complex Gaussian
channel batches with per-component variance 1/(2 * rx).
"""

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError, ParameterError
from .seeding import derive_seed
from .sensing import ComplexChannel

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

_TRAIN_IMAGE_NAMES = ("train-images-idx3-ubyte", "train-images.idx3-ubyte")
_TEST_IMAGE_NAMES = ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte")


# ---------------------------------------------------------------------------
# IDX parsing
# ---------------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    return blob


def load_idx_images(path) -> np.ndarray:
    """Parse a big-endian IDX image file into a uint8 (N, rows, cols) array."""
    blob = _read_bytes(path)
    if len(blob) < 16:
        raise FormatError(f"{path}: too short for an IDX image header")
    magic, count, rows, cols = struct.unpack_from(">IIII", blob)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{path}: magic {magic} is not {IDX_IMAGES_MAGIC} (images)")
    expected = 16 + count * rows * cols
    if len(blob) != expected:
        raise FormatError(f"{path}: {len(blob)} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype=np.uint8, offset=16)
    return data.reshape(count, rows, cols).copy()


def load_idx_labels(path) -> np.ndarray:
    """Parse a big-endian IDX label file into a uint8 (N,) array."""
    blob = _read_bytes(path)
    if len(blob) < 8:
        raise FormatError(f"{path}: too short for an IDX label header")
    magic, count = struct.unpack_from(">II", blob)
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{path}: magic {magic} is not {IDX_LABELS_MAGIC} (labels)")
    if len(blob) != 8 + count:
        raise FormatError(f"{path}: {len(blob)} bytes, expected {8 + count}")
    return np.frombuffer(blob, dtype=np.uint8, offset=8).copy()


def load_mnist_idx(images_path, labels_path=None):
    """Load an IDX image file and, optionally, the matching label file."""
    images = load_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = load_idx_labels(labels_path)
        if labels.shape[0] != images.shape[0]:
            raise FormatError(
                f"{labels_path}: {labels.shape[0]} labels for {images.shape[0]} images")
    return images, labels


# ---------------------------------------------------------------------------
# Resize
# ---------------------------------------------------------------------------

def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a single 2-D image."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"expected a 2-D image, got shape {img.shape}")
    h, w = img.shape
    r = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    c = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    r0 = np.floor(r).astype(int)
    c0 = np.floor(c).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]
    top = img[np.ix_(r0, c0)] * (1 - fc) + img[np.ix_(r0, c1)] * fc
    bot = img[np.ix_(r1, c0)] * (1 - fc) + img[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bot * fr


def resize_to_32(image: np.ndarray) -> np.ndarray:
    """Resize one 28x28 image to 32x32 float64 in [0, 1].

    Integer inputs are treated as raw 0..255 pixels and divided by 255 after
    the interpolation; float inputs are assumed to be already in [0, 1].
    """
    image = np.asarray(image)
    if image.shape != (28, 28):
        raise DimensionError(f"expected a 28x28 image, got shape {image.shape}")
    out = bilinear_resize(image.astype(np.float64), 32, 32)
    if np.issubdtype(image.dtype, np.integer):
        out = out / 255.0
    return out


# ---------------------------------------------------------------------------
# Synthetic fallback images
# ---------------------------------------------------------------------------

def synthetic_images(count: int, seed: int, side: int = 32) -> np.ndarray:
    """Deterministic stroke images in [0, 1], loosely digit-like.

    Each image accumulates 2..3 quadratic Bezier strokes splatted with
    Gaussian bumps, then passes through a saturating tanh. Parameters are
    chosen so the output matches the first-order statistics of bold
    handwritten digits: ~18% ink fraction with ink saturated near 1 on a
    zero background.
    """
    if count < 1:
        raise ParameterError(f"count={count} must be >= 1")
    rng = np.random.default_rng(seed)
    oy, ox = np.meshgrid(np.arange(-2, 3), np.arange(-2, 3), indexing="ij")
    images = np.zeros((count, side, side), dtype=np.float64)
    lo, hi = 4.0, side - 5.0
    for i in range(count):
        canvas = np.zeros((side, side), dtype=np.float64)
        for _ in range(rng.integers(2, 4)):
            p = rng.uniform(lo, hi, size=(3, 2))
            t = np.linspace(0.0, 1.0, 48)[:, None]
            pts = (1 - t) ** 2 * p[0] + 2 * (1 - t) * t * p[1] + t ** 2 * p[2]
            ij = np.round(pts).astype(int)
            frac = pts - ij
            rows = np.clip(ij[:, 0, None, None] + oy, 0, side - 1)
            cols = np.clip(ij[:, 1, None, None] + ox, 0, side - 1)
            d2 = (oy - frac[:, 0, None, None]) ** 2 + (ox - frac[:, 1, None, None]) ** 2
            amp = rng.uniform(0.30, 0.50)
            np.add.at(canvas, (rows, cols), amp * np.exp(-d2 / (2 * 1.1 ** 2)))
        images[i] = np.tanh(3.0 * canvas)
    return images


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

@dataclass
class ImageDataset:
    """Train / val / test images, each (N, 32, 32) float64 in [0, 1]."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    source: str = "synthetic"

    def __post_init__(self):
        for name in ("train", "val", "test"):
            arr = getattr(self, name)
            if arr.ndim != 3:
                raise DimensionError(f"{name} images must be 3-D (N, H, W)")


def _find_idx(data_dir, names):
    for name in names:
        for suffix in ("", ".gz"):
            path = os.path.join(data_dir, name + suffix)
            if os.path.isfile(path):
                return path
    return None


def load_image_dataset(data_dir, n_train: int, n_val: int, n_test: int,
                       seed: int, source: str = "auto") -> ImageDataset:
    """Assemble the 32x32 image dataset.

    source: "mnist" requires IDX files in data_dir, "synthetic" forces the
    generator, "auto" uses IDX files when present and falls back otherwise.
    Splits are drawn with a deterministic shuffle keyed by seed.
    """
    if source not in ("auto", "mnist", "synthetic"):
        raise ParameterError(f"unknown dataset source {source!r}")
    train_path = _find_idx(data_dir, _TRAIN_IMAGE_NAMES) if data_dir else None
    test_path = _find_idx(data_dir, _TEST_IMAGE_NAMES) if data_dir else None
    use_mnist = train_path is not None and test_path is not None
    if source == "mnist" and not use_mnist:
        raise FormatError(f"no IDX image files found under {data_dir!r}")

    if source != "synthetic" and use_mnist:
        raw_train = load_idx_images(train_path)
        raw_test = load_idx_images(test_path)
        if n_train + n_val > raw_train.shape[0] or n_test > raw_test.shape[0]:
            raise ParameterError("requested split exceeds available IDX images")
        rng = np.random.default_rng(derive_seed(seed, "split"))
        order = rng.permutation(raw_train.shape[0])[: n_train + n_val]
        test_order = rng.permutation(raw_test.shape[0])[:n_test]
        pool = np.stack([resize_to_32(img) for img in raw_train[order]])
        test = np.stack([resize_to_32(img) for img in raw_test[test_order]])
        return ImageDataset(train=pool[:n_train], val=pool[n_train:],
                            test=test, source="mnist")

    total = n_train + n_val + n_test
    pool = synthetic_images(total, derive_seed(seed, "synthetic"))
    return ImageDataset(train=pool[:n_train],
                        val=pool[n_train: n_train + n_val],
                        test=pool[n_train + n_val:],
                        source="synthetic")


# ---------------------------------------------------------------------------
# Symbols and channels
# ---------------------------------------------------------------------------

@dataclass
class SymbolBatch:
    """BPSK symbols with the channels and SNRs they were sent through."""

    symbols: np.ndarray                 # (batch, n), entries exactly +/-1
    channel: np.ndarray | None = None   # (batch, m, n) real-lifted
    snr_db: np.ndarray | None = None    # (batch,)

    def __post_init__(self):
        if not np.all(np.isin(self.symbols, (-1.0, 1.0))):
            raise ParameterError("symbols must all be -1 or +1")
        if self.channel is not None and self.channel.shape[0] != self.symbols.shape[0]:
            raise DimensionError("channel batch does not match symbol batch")
        if self.snr_db is not None and len(self.snr_db) != self.symbols.shape[0]:
            raise DimensionError("snr_db length does not match symbol batch")


def gen_bpsk_batch(n: int, batch: int, seed: int) -> np.ndarray:
    """Uniform +/-1 symbol batch of shape (batch, n)."""
    if n < 1 or batch < 1:
        raise DimensionError(f"batch shape ({batch}, {n}) must be positive")
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(batch, n)).astype(np.float64) * 2.0 - 1.0


def gen_channel_batch(rx: int, tx: int, batch: int, seed: int) -> ComplexChannel:
    """Complex Gaussian channels, N(0, 1/(2*rx)) per real component."""
    if rx < 1 or tx < 1 or batch < 1:
        raise DimensionError(f"channel shape ({batch}, {rx}, {tx}) must be positive")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(1.0 / (2.0 * rx))
    real = rng.standard_normal((batch, rx, tx)) * scale
    imag = rng.standard_normal((batch, rx, tx)) * scale
    return ComplexChannel(real=real, imag=imag)

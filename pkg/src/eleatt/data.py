"""Datasets: IDX image/label files, sequence views, and synthetic tasks.

IDX is the classic big-endian binary layout for digit images: a u32 magic
(0x00000803 for u8 image tensors, 0x00000801 for u8 label vectors), u32
dimension sizes, then the raw payload.  Images load as float64 scaled by
1/255; labels as int64.

An image becomes a sequence in one of two ways:

* pixelwise: row-major scan, one pixel per step  -> (T=784, D=1)
* rowwise:   one image row per step              -> (T=28,  D=28)

`write_stroke_digits` synthesizes a deterministic digit dataset in the same
IDX layout: jittered seven-segment strokes with distractor strokes and
pixel noise.  It stands in for the real handwritten set in environments
without it; point ELEATT_DATA_DIR (or --data) at a directory with the real
files and everything downstream is unchanged.
"""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.stats import norm

from .errors import (
    ConfigError,
    DataFormatError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
)
from .rng import stream

__all__ = [
    "IMAGE_MAGIC",
    "LABEL_MAGIC",
    "read_idx_images",
    "read_idx_labels",
    "write_idx_images",
    "write_idx_labels",
    "load_idx",
    "load_digit_pairs",
    "DataSplits",
    "sequentialize",
    "desequentialize",
    "split_train_val",
    "PlantedTask",
    "gen_planted_task",
    "write_stroke_digits",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


def _open_maybe_gz(path: Path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, n: int, what: str) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise IdxTruncatedError(f"{what}: expected {n} bytes, got {len(raw)}")
    return raw


def read_idx_images(path) -> np.ndarray:
    """Load an IDX image tensor as float64 in [0, 1], shape (n, rows, cols)."""
    path = Path(path)
    with _open_maybe_gz(path) as f:
        magic, = struct.unpack(">i", _read_exact(f, 4, "image header"))
        if magic != IMAGE_MAGIC:
            raise IdxMagicError(
                f"{path.name}: image magic {magic:#010x}, "
                f"expected {IMAGE_MAGIC:#010x}")
        n, rows, cols = struct.unpack(">iii", _read_exact(f, 12, "image dims"))
        if min(n, rows, cols) < 0:
            raise DataFormatError(f"{path.name}: negative dimension")
        raw = _read_exact(f, n * rows * cols, "image payload")
        if f.read(1):
            raise DataFormatError(f"{path.name}: trailing bytes after payload")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows, cols)
    return pixels.astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    """Load an IDX label vector as int64, shape (n,)."""
    path = Path(path)
    with _open_maybe_gz(path) as f:
        magic, = struct.unpack(">i", _read_exact(f, 4, "label header"))
        if magic != LABEL_MAGIC:
            raise IdxMagicError(
                f"{path.name}: label magic {magic:#010x}, "
                f"expected {LABEL_MAGIC:#010x}")
        n, = struct.unpack(">i", _read_exact(f, 4, "label count"))
        if n < 0:
            raise DataFormatError(f"{path.name}: negative count")
        raw = _read_exact(f, n, "label payload")
        if f.read(1):
            raise DataFormatError(f"{path.name}: trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    """Write u8 images (n, rows, cols) in IDX layout."""
    images = np.asarray(images)
    if images.dtype != np.uint8 or images.ndim != 3:
        raise ConfigError("write_idx_images wants uint8 (n, rows, cols)")
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ConfigError("write_idx_labels wants a 1-d array")
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def load_idx(images_path, labels_path):
    """Load a matched (images, labels) pair.

    Raises IdxCountMismatchError when the two files disagree on the sample
    count — the one corruption the per-file readers cannot see.
    """
    x = read_idx_images(images_path)
    y = read_idx_labels(labels_path)
    if x.shape[0] != y.shape[0]:
        raise IdxCountMismatchError(
            f"{Path(images_path).name}: {x.shape[0]} images vs "
            f"{y.shape[0]} labels in {Path(labels_path).name}")
    return x, y


def _find_file(root: Path, base: str) -> Path:
    for cand in (root / base, root / (base + ".gz")):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"{base}[.gz] not found under {root}")


def load_digit_pairs(data_dir) -> dict:
    """Load the four canonical files from a directory.

    Returns {"train": (images, labels), "test": (images, labels)} with
    images float64 (n, 28, 28) and labels int64.
    """
    root = Path(data_dir)
    out = {}
    for split, (imgs, labs) in (("train", (TRAIN_IMAGES, TRAIN_LABELS)),
                                ("test", (TEST_IMAGES, TEST_LABELS))):
        out[split] = load_idx(_find_file(root, imgs), _find_file(root, labs))
    return out


# ---------------------------------------------------------------------------
# sequence views

def sequentialize(images: np.ndarray, mode: str) -> np.ndarray:
    """(n, r, c) images -> (n, T, D) sequences.

    pixelwise: row-major scan, T = r*c, D = 1.
    rowwise:   T = r, D = c.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 2 + 1:
        raise ConfigError(f"images must be (n, rows, cols), got {images.shape}")
    n, r, c = images.shape
    if mode == "pixelwise":
        return images.reshape(n, r * c, 1)
    if mode == "rowwise":
        return images.reshape(n, r, c)
    raise ConfigError(f"unknown sequence mode {mode!r}")


def desequentialize(seq: np.ndarray, mode: str, rows: int = 28,
                    cols: int = 28) -> np.ndarray:
    """Inverse of sequentialize for the given grid size."""
    seq = np.asarray(seq)
    n = seq.shape[0]
    if mode == "pixelwise":
        if seq.shape[1:] != (rows * cols, 1):
            raise ConfigError(f"pixelwise sequences must be (n, {rows * cols}, 1)")
        return seq.reshape(n, rows, cols)
    if mode == "rowwise":
        if seq.shape[1:] != (rows, cols):
            raise ConfigError(f"rowwise sequences must be (n, {rows}, {cols})")
        return seq.reshape(n, rows, cols)
    raise ConfigError(f"unknown sequence mode {mode!r}")


def split_train_val(x: np.ndarray, y: np.ndarray, val_size: int, seed: int):
    """Deterministic shuffled split; returns (x_tr, y_tr, x_val, y_val).

    val_size = 0 is legal and yields an empty validation split.
    """
    n = x.shape[0]
    if not 0 <= val_size < n:
        raise ConfigError(f"val_size must be in [0, {n}), got {val_size}")
    perm = stream(seed, "data").permutation(n)
    val_idx, tr_idx = perm[:val_size], perm[val_size:]
    return x[tr_idx], y[tr_idx], x[val_idx], y[val_idx]


@dataclass(eq=False)
class DataSplits:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray | None = None
    y_test: np.ndarray | None = None


# ---------------------------------------------------------------------------
# planted-signal diagnostic task

@dataclass(eq=False)
class PlantedTask:
    """Binary task where only `informative` dims carry class signal."""

    splits: DataSplits
    informative: np.ndarray  # sorted indices of signal-carrying dims
    bayes_acc: float


def gen_planted_task(n_samples: int, t: int = 20, d: int = 16,
                     k_informative: int = 4, noise_sigma: float = 1.0,
                     seed: int = 0, mu: float = 0.5,
                     val_frac: float = 0.15,
                     test_frac: float = 0.15) -> PlantedTask:
    """Gaussian sequences where k of d dims have mean +-mu by class.

    Every entry is N(mean, noise_sigma^2); the mean is +mu (class 1) or -mu
    (class 0) on the k informative dims and 0 elsewhere.  Labels are exactly
    balanced (within one sample when n is odd).  The Bayes-optimal rule
    thresholds the sum over informative entries, giving accuracy
    Phi(sqrt(k*t) * mu / noise_sigma).
    """
    if not 0 < k_informative < d:
        raise ConfigError(
            f"k_informative must be in (0, {d}), got {k_informative}")
    if n_samples < 2:
        raise ConfigError(f"need at least 2 samples, got {n_samples}")
    rng = stream(seed, "data")
    informative = np.sort(rng.choice(d, size=k_informative, replace=False))
    base = np.repeat([0, 1], [n_samples // 2, n_samples - n_samples // 2])
    y = rng.permutation(base).astype(np.int64)
    x = rng.normal(0.0, noise_sigma, size=(n_samples, t, d))
    signs = np.where(y == 1, mu, -mu)  # (n,)
    x[:, :, informative] += signs[:, None, None]
    bayes = float(norm.cdf(np.sqrt(k_informative * t) * mu / noise_sigma))

    n_val = max(1, int(round(n_samples * val_frac)))
    n_test = max(1, int(round(n_samples * test_frac)))
    n_train = n_samples - n_val - n_test
    if n_train < 1:
        raise ConfigError("not enough samples for the requested split")
    splits = DataSplits(
        x_train=x[:n_train], y_train=y[:n_train],
        x_val=x[n_train:n_train + n_val], y_val=y[n_train:n_train + n_val],
        x_test=x[n_train + n_val:], y_test=y[n_train + n_val:],
    )
    return PlantedTask(splits=splits, informative=informative,
                       bayes_acc=bayes)


# ---------------------------------------------------------------------------
# stroke-digit stand-in dataset

# seven-segment endpoints on a 28x28 canvas: (r0, c0) -> (r1, c1)
_SEGMENTS = {
    "top": ((4.0, 9.0), (4.0, 19.0)),
    "mid": ((14.0, 9.0), (14.0, 19.0)),
    "bot": ((24.0, 9.0), (24.0, 19.0)),
    "tl": ((4.0, 9.0), (14.0, 9.0)),
    "bl": ((14.0, 9.0), (24.0, 9.0)),
    "tr": ((4.0, 19.0), (14.0, 19.0)),
    "br": ((14.0, 19.0), (24.0, 19.0)),
}

_DIGIT_SEGMENTS = {
    0: ("top", "tl", "tr", "bl", "br", "bot"),
    1: ("tr", "br"),
    2: ("top", "tr", "mid", "bl", "bot"),
    3: ("top", "tr", "mid", "br", "bot"),
    4: ("tl", "tr", "mid", "br"),
    5: ("top", "tl", "mid", "br", "bot"),
    6: ("top", "tl", "mid", "bl", "br", "bot"),
    7: ("top", "tr", "br"),
    8: ("top", "tl", "tr", "mid", "bl", "br", "bot"),
    9: ("top", "tl", "tr", "mid", "br", "bot"),
}


def _stamp_line(canvas: np.ndarray, p0, p1, rng, jitter, rot, scale) -> None:
    n_pts = 32
    rr = np.linspace(p0[0], p1[0], n_pts)
    cc = np.linspace(p0[1], p1[1], n_pts)
    # rotate and scale about the canvas center, then shift
    rrc, ccc = rr - 14.0, cc - 14.0
    cos, sin = np.cos(rot), np.sin(rot)
    rr = 14.0 + scale * (cos * rrc - sin * ccc) + jitter[0]
    cc = 14.0 + scale * (sin * rrc + cos * ccc) + jitter[1]
    # per-point wobble keeps strokes from being perfectly straight
    rr = rr + rng.normal(0.0, 0.25, size=n_pts)
    cc = cc + rng.normal(0.0, 0.25, size=n_pts)
    ri = np.clip(np.round(rr), 0, 27).astype(np.intp)
    ci = np.clip(np.round(cc), 0, 27).astype(np.intp)
    canvas[ri, ci] = 1.0


def _render_digit(digit: int, rng: np.random.Generator) -> np.ndarray:
    canvas = np.zeros((28, 28))
    jitter = rng.uniform(-2.5, 2.5, size=2)
    rot = rng.uniform(-0.18, 0.18)
    scale = rng.uniform(0.8, 1.15)
    for name in _DIGIT_SEGMENTS[digit]:
        p0, p1 = _SEGMENTS[name]
        _stamp_line(canvas, p0, p1, rng, jitter, rot, scale)
    # distractor strokes in the background
    for _ in range(rng.integers(1, 4)):
        r0, c0 = rng.uniform(2, 26, size=2)
        ang = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(3, 7)
        p0 = (r0, c0)
        p1 = (r0 + length * np.cos(ang), c0 + length * np.sin(ang))
        tmp = np.zeros((28, 28))
        _stamp_line(tmp, p0, p1, rng, (0.0, 0.0), 0.0, 1.0)
        canvas += rng.uniform(0.35, 0.7) * tmp
    img = ndimage.gaussian_filter(canvas, sigma=0.75)
    peak = img.max()
    if peak > 0:
        img = img / peak
    img = img * rng.uniform(0.75, 1.0) * 255.0
    img = img + rng.normal(0.0, 12.0, size=img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def write_stroke_digits(data_dir, n_train: int = 12000, n_test: int = 2000,
                        seed: int = 7) -> None:
    """Write a synthetic digit dataset in the canonical IDX layout."""
    root = Path(data_dir)
    root.mkdir(parents=True, exist_ok=True)
    rng = stream(seed, "data")
    for count, img_name, lab_name in ((n_train, TRAIN_IMAGES, TRAIN_LABELS),
                                      (n_test, TEST_IMAGES, TEST_LABELS)):
        labels = rng.integers(0, 10, size=count).astype(np.int64)
        images = np.empty((count, 28, 28), dtype=np.uint8)
        for i in range(count):
            images[i] = _render_digit(int(labels[i]), rng)
        write_idx_images(root / img_name, images)
        write_idx_labels(root / lab_name, labels)

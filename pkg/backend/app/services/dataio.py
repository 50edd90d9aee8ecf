# app/services/dataio.py
"""
MNIST IDX ingestion, seeded splitting (equal / ratio / with label flips),
label-flip corruption and a synthetic digit-like generator for tests.

IDX layout (big-endian):
  images: [magic 0x00000803][count][rows][cols] then count*rows*cols u8 pixels
  labels: [magic 0x00000801][count] then count u8 labels
"""
import gzip
import logging
import math
import os
import struct
from pathlib import Path

import numpy as np

from app.config import settings
from app.exceptions import BadMagicError, DataError, IdxFormatError, SplitError, TruncatedFileError
from app.models.dataset import NUM_CLASSES, Dataset, EqualRandom, RatioRandom, SplitSpec, WithFlip
from app.utils.seeds import derive_seed

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


# ==========================================
# 1. IDX FILES
# ==========================================

def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _read_images(raw: bytes, path) -> np.ndarray:
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: image header needs 16 bytes, got {len(raw)}")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise BadMagicError(f"{path}: magic 0x{magic:08x} is not an image file (0x{IMAGES_MAGIC:08x})")
    expected = count * rows * cols
    if len(raw) - 16 < expected:
        raise TruncatedFileError(f"{path}: {len(raw) - 16} pixel bytes, header promises {expected}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=16)
    return pixels.reshape(count, rows * cols)


def _read_labels(raw: bytes, path) -> np.ndarray:
    if len(raw) < 8:
        raise TruncatedFileError(f"{path}: label header needs 8 bytes, got {len(raw)}")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise BadMagicError(f"{path}: magic 0x{magic:08x} is not a label file (0x{LABELS_MAGIC:08x})")
    if len(raw) - 8 < count:
        raise TruncatedFileError(f"{path}: {len(raw) - 8} label bytes, header promises {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8)


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Reads an IDX image/label pair; pixels are scaled by 1/255."""
    pixels = _read_images(_read_bytes(images_path), images_path)
    labels = _read_labels(_read_bytes(labels_path), labels_path)
    if pixels.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images_path} holds {pixels.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    if labels.size and int(labels.max()) >= NUM_CLASSES:
        raise IdxFormatError(f"{labels_path}: label {int(labels.max())} outside 0..{NUM_CLASSES - 1}")
    return Dataset(
        images=pixels.astype(np.float64) / 255.0,
        labels=labels.astype(np.int64),
        provenance=os.path.basename(str(images_path)),
    )


def write_idx(data: Dataset, images_path: str | Path, labels_path: str | Path, shape: tuple[int, int] | None = None) -> None:
    """
    Writes `data` as an IDX pair. Pixels must be exact multiples of 1/255 so the
    round trip through load_idx is lossless.
    """
    n, d = len(data), data.n_features
    if shape is None:
        side = math.isqrt(d)
        shape = (side, side) if side * side == d else (1, d)
    if shape[0] * shape[1] != d:
        raise DataError(f"image shape {shape} does not hold {d} features")
    raw = np.rint(data.images * 255.0)
    if not np.array_equal(raw / 255.0, data.images) or not np.all((raw >= 0) & (raw <= 255)):
        raise DataError("images are not exact multiples of 1/255 in [0, 1]; IDX would be lossy")

    Path(images_path).parent.mkdir(parents=True, exist_ok=True)
    Path(labels_path).parent.mkdir(parents=True, exist_ok=True)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, n, shape[0], shape[1]))
        f.write(raw.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, n))
        f.write(data.labels.astype(np.uint8).tobytes())


def _resolve(data_dir: Path, name: str) -> Path:
    for candidate in (data_dir / name, data_dir / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"MNIST file {name}(.gz) not found in {data_dir}")


def load_mnist(data_dir: str | Path | None = None) -> tuple[Dataset, Dataset]:
    """(train, test) from the canonical MNIST file names."""
    data_dir = Path(data_dir or settings.MNIST_DATA_DIR)
    train = load_idx(_resolve(data_dir, settings.TRAIN_IMAGES), _resolve(data_dir, settings.TRAIN_LABELS))
    test = load_idx(_resolve(data_dir, settings.TEST_IMAGES), _resolve(data_dir, settings.TEST_LABELS))
    logger.info("Loaded MNIST from %s: %d train, %d test", data_dir, len(train), len(test))
    return train, test


# ==========================================
# 2. SPLITTING
# ==========================================

def apportion(n: int, ratios: tuple[int, ...] | list[int]) -> list[int]:
    """Largest-remainder apportionment of n items; ties go to the lower index."""
    total = sum(ratios)
    quotas = [n * r for r in ratios]
    sizes = [q // total for q in quotas]
    leftover = n - sum(sizes)
    by_remainder = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] % total), i))
    for i in by_remainder[:leftover]:
        sizes[i] += 1
    return sizes


def split(data: Dataset, spec: SplitSpec, seed: int) -> list[Dataset]:
    """Seeded partition of `data`; parts are disjoint and cover every sample once."""
    if len(data) == 0:
        raise SplitError("cannot split an empty dataset")
    if len(data) < spec.client_count:
        raise SplitError(f"{len(data)} samples cannot be split between {spec.client_count} clients")

    if isinstance(spec, WithFlip):
        parts = split(data, spec.base, seed)
        return [
            flip_labels(part, p, derive_seed(seed, "flip", i)) if p > 0 else part
            for i, (part, p) in enumerate(zip(parts, spec.flip_probs))
        ]

    if isinstance(spec, EqualRandom):
        sizes = apportion(len(data), [1] * spec.n_clients)
    elif isinstance(spec, RatioRandom):
        sizes = apportion(len(data), spec.ratios)
    else:
        raise SplitError(f"unknown split spec {spec!r}")

    order = np.random.default_rng(seed).permutation(len(data))
    parts = []
    start = 0
    for i, size in enumerate(sizes):
        rows = order[start:start + size]
        start += size
        parts.append(data.take(rows, f"{data.provenance} | {spec} part {i + 1}/{len(sizes)} seed={seed}"))
    return parts


def subsample(data: Dataset, fraction: float, seed: int) -> Dataset:
    """Seeded subset of round(fraction * n) samples, in original order."""
    if not 0 < fraction <= 1:
        raise ValueError(f"subsample fraction must lie in (0, 1], got {fraction}")
    k = int(math.floor(fraction * len(data) + 0.5))
    rows = np.sort(np.random.default_rng(seed).choice(len(data), size=k, replace=False))
    return data.take(rows, f"{data.provenance} | subsample {k}/{len(data)} seed={seed}")


# ==========================================
# 3. LABEL FLIPPING
# ==========================================

def flip_count(n: int, p: float) -> int:
    return int(math.floor(p * n + 0.5))


def _draw_flip_rows(n: int, p: float, seed: int) -> tuple[np.ndarray, np.random.Generator]:
    """Rows to redraw plus the generator, positioned to draw their new labels next."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"flip proportion must lie in [0, 1], got {p}")
    rng = np.random.default_rng(seed)
    return rng.choice(n, size=flip_count(n, p), replace=False), rng


def flip_indices(n: int, p: float, seed: int) -> np.ndarray:
    """The rows flip_labels(data, p, seed) redraws, for a dataset of n samples."""
    return _draw_flip_rows(n, p, seed)[0]


def flip_labels(data: Dataset, p: float, seed: int) -> Dataset:
    """
    Redraws the labels of exactly round(p*n) distinct samples uniformly from all
    10 classes (a redraw may hit the original label). Images are untouched.
    """
    rows, rng = _draw_flip_rows(len(data), p, seed)
    k = len(rows)
    if k == 0:
        return data
    labels = data.labels.copy()
    labels[rows] = rng.integers(0, NUM_CLASSES, size=k)
    return data.with_labels(labels, f"{data.provenance} | flip p={p:g} ({k} redrawn) seed={seed}")


# ==========================================
# 4. SYNTHETIC DATA (tests and smoke runs only)
# ==========================================

def synthetic_dataset(n: int, seed: int, side: int = 8, noise: float = 0.25, prototype_seed: int = 0) -> Dataset:
    """
    Ten class prototypes (fixed by `prototype_seed`, so train and test sets drawn
    with different seeds share them) plus pixel noise, quantised to k/255 so the
    set survives write_idx/load_idx unchanged.
    """
    d = side * side
    prototypes = np.random.default_rng(prototype_seed).uniform(0.0, 1.0, size=(NUM_CLASSES, d))
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, NUM_CLASSES, size=n)
    images = prototypes[labels] + rng.normal(0.0, noise, size=(n, d))
    images = np.rint(np.clip(images, 0.0, 1.0) * 255.0) / 255.0
    return Dataset(images=images, labels=labels, provenance=f"synthetic(n={n}, seed={seed})")

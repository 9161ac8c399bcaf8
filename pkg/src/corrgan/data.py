"""On-disk dataset format and dataset-level corruption.

A dataset directory holds ``images.bin`` (raw uint8, N x 32 x 32 x 3,
row-major) and ``meta.json``. Images are float32 in [0, 1] in memory.
"""
from __future__ import annotations

import json
import logging
import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corruptions import IMAGE_SHAPE, CorruptionSpec, apply_corruption, check_batch, get_kind
from .errors import InvalidSpec, IoError, ShapeError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
IMAGES_FILE = "images.bin"
META_FILE = "meta.json"
CORRUPT_CHUNK = 1000


@dataclass
class CorruptedDataset:
    images: np.ndarray  # N x 32 x 32 x 3 float32 in [0, 1]
    class_labels: np.ndarray  # N ints in [0, 10)
    corruption_kind: str | None = None
    severity: int | None = None
    seed: int | None = None

    def __post_init__(self):
        self.class_labels = np.asarray(self.class_labels, dtype=np.int64)
        check_batch(self.images)
        if len(self.images) != len(self.class_labels):
            raise ShapeError(f"{len(self.images)} images but {len(self.class_labels)} labels")

    def __len__(self):
        return len(self.class_labels)

    def subset(self, idx) -> "CorruptedDataset":
        return CorruptedDataset(self.images[idx], self.class_labels[idx], self.corruption_kind, self.severity, self.seed)


def quantize(images: np.ndarray) -> np.ndarray:
    """float [0, 1] -> uint8 with round-half-to-even."""
    return np.clip(np.rint(np.asarray(images, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def dequantize(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / np.float32(255.0)


def save_dataset(ds: CorruptedDataset, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        (path / IMAGES_FILE).write_bytes(quantize(ds.images).tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write dataset to {path}: {exc}") from exc
    meta = {
        "count": len(ds),
        "height": IMAGE_SHAPE[0],
        "width": IMAGE_SHAPE[1],
        "channels": IMAGE_SHAPE[2],
        "class_labels": [int(c) for c in ds.class_labels],
        "corruption_kind": ds.corruption_kind,
        "severity": ds.severity,
        "seed": ds.seed,
        "format_version": FORMAT_VERSION,
    }
    (path / META_FILE).write_text(json.dumps(meta))
    return path


def load_meta(path: str | Path) -> dict:
    path = Path(path)
    meta_path = path / META_FILE
    if not meta_path.is_file() or not (path / IMAGES_FILE).is_file():
        raise IoError(f"no dataset at {path} (need {IMAGES_FILE} and {META_FILE})")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise InvalidSpec(f"{path}: unsupported dataset format_version {meta.get('format_version')}")
    return meta


def load_dataset(path: str | Path) -> CorruptedDataset:
    path = Path(path)
    meta = load_meta(path)
    shape = (meta["count"], meta["height"], meta["width"], meta["channels"])
    raw = np.fromfile(path / IMAGES_FILE, dtype=np.uint8)
    if raw.size != np.prod(shape):
        raise ShapeError(f"{path}: {raw.size} bytes in {IMAGES_FILE}, meta says {shape}")
    return CorruptedDataset(
        dequantize(raw.reshape(shape)),
        np.asarray(meta["class_labels"], dtype=np.int64),
        meta["corruption_kind"],
        meta["severity"],
        meta["seed"],
    )


def corrupt_images(images: np.ndarray, spec: CorruptionSpec, chunk: int = CORRUPT_CHUNK) -> np.ndarray:
    """Corrupt a large array chunk by chunk; chunk ``i`` uses RNG stream (seed, i)."""
    out = np.empty_like(images)
    for b, start in enumerate(range(0, len(images), chunk)):
        out[start:start + chunk] = apply_corruption(images[start:start + chunk], spec, batch_index=b)
    return out


def corrupt_dataset(
    clean: str | Path,
    kinds: Sequence[str],
    severities: Sequence[int],
    seed: int,
    out_dir: str | Path,
    layout: str = "nested",
) -> list[Path]:
    """Write one corrupted dataset per (kind, severity).

    With ``layout="nested"`` outputs go to ``out_dir/<kind>_s<severity>``;
    ``layout="flat"`` writes a single (kind, severity) pair straight into
    ``out_dir``.
    """
    if not kinds or not severities:
        raise InvalidSpec("kinds and severities must both be non-empty")
    for k in kinds:
        get_kind(k)
    specs = [CorruptionSpec(k, s, seed) for k in kinds for s in severities]
    if layout == "flat" and len(specs) != 1:
        raise InvalidSpec("flat layout needs exactly one (kind, severity)")
    src = load_dataset(clean)
    written = []
    for spec in specs:
        imgs = corrupt_images(src.images, spec)
        target = Path(out_dir) if layout == "flat" else Path(out_dir) / f"{spec.kind}_s{spec.severity}"
        save_dataset(CorruptedDataset(imgs, src.class_labels, spec.kind, spec.severity, seed), target)
        log.info("wrote %d images to %s", len(src), target)
        written.append(target)
    return written


# ---------------------------------------------------------------------------
# clean data sources

def _shape_mask(cls: int, yy, xx, rng) -> np.ndarray:
    cy, cx = rng.uniform(11, 21, size=2)
    r = rng.uniform(6, 10)
    dy, dx = yy - cy, xx - cx
    ang = rng.uniform(-0.35, 0.35)
    ry = dy * np.cos(ang) - dx * np.sin(ang)
    rx = dy * np.sin(ang) + dx * np.cos(ang)
    period = rng.uniform(5, 8)
    phase = rng.uniform(0, period)
    if cls == 0:  # disk
        return dy**2 + dx**2 <= r**2
    if cls == 1:  # square
        return (np.abs(ry) <= r * 0.8) & (np.abs(rx) <= r * 0.8)
    if cls == 2:  # triangle
        return (ry <= r * 0.7) & (ry >= -r * 0.9 + 1.7 * np.abs(rx))
    if cls == 3:  # ring
        d = np.sqrt(dy**2 + dx**2)
        return (d <= r) & (d >= r * 0.55)
    if cls == 4:  # plus
        arm = r * 0.3
        return ((np.abs(ry) <= arm) & (np.abs(rx) <= r)) | ((np.abs(rx) <= arm) & (np.abs(ry) <= r))
    if cls == 5:  # horizontal stripes
        return ((yy + phase) % period) < period / 2
    if cls == 6:  # vertical stripes
        return ((xx + phase) % period) < period / 2
    if cls == 7:  # diagonal stripes
        return ((yy + xx + phase) % (period * 1.4)) < period * 0.7
    if cls == 8:  # checkerboard
        return (((yy + phase) // (period / 1.5)) + ((xx + phase) // (period / 1.5))) % 2 == 0
    # two blobs
    off = rng.uniform(4, 7)
    rr = r * 0.45
    return ((dy - off) ** 2 + (dx - off) ** 2 <= rr**2) | ((dy + off) ** 2 + (dx + off) ** 2 <= rr**2)


def make_synthetic(n: int, seed: int = 0, num_classes: int = 10) -> CorruptedDataset:
    """Procedural 10-class 32x32 RGB dataset, a stand-in when CIFAR-10 is unavailable.

    Each class is a shape or texture family drawn with random colours,
    position, scale, orientation, background gradient and pixel noise.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    yy, xx = np.mgrid[0:32, 0:32].astype(np.float64)
    labels = rng.integers(0, num_classes, size=n)
    images = np.empty((n, 32, 32, 3), dtype=np.float32)
    for i, cls in enumerate(labels):
        bg = rng.uniform(0.05, 0.75, size=3)
        fg = rng.uniform(0.05, 0.95, size=3)
        while np.abs(fg - bg).sum() < 0.6:
            fg = rng.uniform(0.05, 0.95, size=3)
        grad = rng.normal(0, 0.006, size=2)
        base = bg + ((yy - 16) * grad[0] + (xx - 16) * grad[1])[..., None]
        mask = _shape_mask(int(cls), yy, xx, rng)[..., None]
        img = np.where(mask, fg, base) + rng.normal(0, 0.04, size=(32, 32, 3))
        images[i] = np.clip(img, 0, 1)
    return CorruptedDataset(images, labels, seed=seed)


def load_cifar10_batches(cifar_dir: str | Path, split: str = "train") -> CorruptedDataset:
    """Read the python-pickle CIFAR-10 batches (``data_batch_*`` / ``test_batch``)."""
    cifar_dir = Path(cifar_dir)
    names = [f"data_batch_{i}" for i in range(1, 6)] if split == "train" else ["test_batch"]
    images, labels = [], []
    for name in names:
        f = cifar_dir / name
        if not f.is_file():
            raise IoError(f"missing CIFAR-10 batch file {f}")
        with open(f, "rb") as fh:
            d = pickle.load(fh, encoding="bytes")
        images.append(np.asarray(d[b"data"], dtype=np.uint8).reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
        labels.extend(d[b"labels"])
    return CorruptedDataset(dequantize(np.concatenate(images)), np.asarray(labels))

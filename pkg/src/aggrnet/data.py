"""Datasets: in-memory container, synthetic generator, AGT1 bundles and manifests."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import agt1
from .errors import DataError


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, H, W) float in [0, 1]
    labels: np.ndarray  # (N,) int64
    class_names: list[str] = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.class_names:
            k = int(self.labels.max()) + 1 if self.labels.size else 0
            self.class_names = [f"class_{i}" for i in range(k)]
        self.validate()

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def validate(self) -> None:
        if self.images.ndim != 4 or self.images.shape[0] == 0:
            raise DataError(f"dataset needs (N>0, C, H, W) images, got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError(f"{self.labels.shape[0]} labels for {self.images.shape[0]} images")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.images)):
            raise DataError("dataset contains non-finite pixel values")

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], list(self.class_names), self.split)


def generate_synthetic(num_classes: int, n_per_class: int, height: int = 32, width: int = 32,
                       seed: int = 0, difficulty: float = 0.0) -> Dataset:
    """Balanced class-conditional images.

    Each class owns a blob position, a grating frequency/orientation and a
    colour. Samples vary by a random amplitude and a +-1 pixel blob jitter;
    Gaussian noise with std ``0.5 * difficulty`` is added before clipping.
    """
    if num_classes < 2:
        raise DataError("synthetic data needs at least 2 classes")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    images = np.empty((num_classes * n_per_class, 3, height, width), dtype=np.float32)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    sigma = max(height, width) / 8.0
    for k in range(num_classes):
        angle = 2 * np.pi * k / num_classes
        cy = height / 2 + 0.28 * height * np.sin(angle)
        cx = width / 2 + 0.28 * width * np.cos(angle)
        freq = 2 * np.pi * (1 + k) / max(height, width)
        orient = np.pi * k / num_classes
        colour = np.array([0.5 + 0.5 * np.cos(angle), 0.5 + 0.5 * np.sin(angle),
                           0.5 + 0.5 * np.cos(angle + 2.1)])
        grating = 0.5 + 0.5 * np.sin(freq * (np.cos(orient) * xx + np.sin(orient) * yy))
        for i in range(n_per_class):
            dy, dx = rng.integers(-1, 2, size=2)
            amp = rng.uniform(0.8, 1.0)
            blob = np.exp(-((yy - cy - dy) ** 2 + (xx - cx - dx) ** 2) / (2 * sigma ** 2))
            img = 0.1 + amp * (0.6 * blob[None] * colour[:, None, None] + 0.3 * grating[None] * (1 - colour[:, None, None]))
            if difficulty > 0:
                img = img + rng.normal(0.0, 0.5 * difficulty, size=img.shape)
            images[k * n_per_class + i] = np.clip(img, 0.0, 1.0)
    order = rng.permutation(len(labels))
    return Dataset(images[order], labels[order], [f"class_{k}" for k in range(num_classes)], "synthetic")


# -- bundles ----------------------------------------------------------------

def save_dataset(ds: Dataset, directory: str | Path) -> None:
    """Directory of per-image AGT1 files + manifest.csv + meta.json."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (img, label) in enumerate(zip(ds.images, ds.labels)):
        rel = f"images/{i:06d}.agt"
        agt1.save(root / rel, img)
        rows.append((rel, int(label)))
    with open(root / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("# relative_path,label_index\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerows(rows)
    h, w = ds.images.shape[2:]
    meta = {"class_names": list(ds.class_names), "K": ds.num_classes, "H": int(h), "W": int(w),
            "split": ds.split}
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_dataset(directory: str | Path) -> Dataset:
    root = Path(directory)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise DataError(f"dataset metadata not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        k = int(meta["K"])
        names = list(meta.get("class_names") or [f"class_{i}" for i in range(k)])
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{meta_path}: malformed metadata ({exc})") from None
    ds = load_manifest(root / "manifest.csv", num_classes=k, class_names=names)
    ds.split = meta.get("split", "train")
    return ds


def load_manifest(path: str | Path, num_classes: int | None = None,
                  class_names: list[str] | None = None) -> Dataset:
    """Assemble a dataset from ``relative_path,label_index`` rows (``#`` comments allowed)."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    if num_classes is None and class_names is not None:
        num_classes = len(class_names)
    images, labels = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 'relative_path,label_index', got {row!r}")
            rel, label_text = row[0].strip(), row[1].strip()
            try:
                label = int(label_text)
            except ValueError:
                raise DataError(f"{path}:{lineno}: label {label_text!r} is not an integer") from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise DataError(f"{path}:{lineno}: label {label} outside [0, {num_classes})")
            file = path.parent / rel
            if not file.is_file():
                raise DataError(f"{path}:{lineno}: missing image file {file}")
            try:
                img = agt1.load(file)
            except Exception as exc:
                raise DataError(f"{path}:{lineno}: unreadable image {file} ({exc})") from None
            if img.ndim != 3:
                raise DataError(f"{path}:{lineno}: image must be (C,H,W), got {img.shape}")
            if images and img.shape != images[0].shape:
                raise DataError(f"{path}:{lineno}: image shape {img.shape} differs from {images[0].shape}")
            images.append(img)
            labels.append(label)
    if not images:
        raise DataError(f"{path}: manifest has no samples")
    if class_names is None:
        k = num_classes if num_classes is not None else max(labels) + 1
        class_names = [f"class_{i}" for i in range(k)]
    return Dataset(np.stack(images), np.array(labels, dtype=np.int64), list(class_names))

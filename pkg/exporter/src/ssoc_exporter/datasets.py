"""Image sources for the exporter.

``synthetic-shapes`` is generated procedurally and ships with the
package, so the full pipeline runs without any downloads. ``folder:PATH``
reads a class-per-subdirectory image tree, and ``cifar10:PATH`` reads the
standard python-pickle batches from an already-downloaded copy.
"""

from __future__ import annotations

import pickle
from pathlib import Path

import numpy as np


class DatasetError(RuntimeError):
    """The requested image dataset cannot be loaded."""


def load_dataset(name: str, images_per_class: int, seed: int):
    """Returns (images uint8 (n, h, w, 3), labels int64 (n,), class_count)."""
    if name == "synthetic-shapes":
        return synthetic_shapes(class_count=10, per_class=images_per_class, seed=seed)
    if name.startswith("folder:"):
        return folder_dataset(Path(name.split(":", 1)[1]), images_per_class)
    if name.startswith("cifar10:"):
        return cifar10_dataset(Path(name.split(":", 1)[1]), images_per_class)
    raise DatasetError(
        f"unknown dataset {name!r}; expected synthetic-shapes, folder:PATH, or cifar10:PATH"
    )


def synthetic_shapes(class_count: int = 10, per_class: int = 50, seed: int = 0,
                     size: int = 64) -> tuple[np.ndarray, np.ndarray, int]:
    """Procedural image classes: distinct background hue plus a patterned figure.

    Per-image jitter moves the figure and perturbs the colors, so two
    augmented crops of one image differ while classes stay far apart even
    under an untrained encoder.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x51AE)))
    backgrounds = _hue_wheel(class_count, value=0.45, offset=0.0)
    figures = _hue_wheel(class_count, value=0.95, offset=0.5 / class_count)

    yy, xx = np.mgrid[0:size, 0:size]
    images, labels = [], []
    for cls in range(class_count):
        for _ in range(per_class):
            img = np.empty((size, size, 3), dtype=np.float64)
            img[:] = backgrounds[cls] + rng.normal(scale=8.0, size=3)
            cx = rng.uniform(0.3, 0.7) * size
            cy = rng.uniform(0.3, 0.7) * size
            r = rng.uniform(0.16, 0.24) * size
            mask = _figure_mask(cls, xx, yy, cx, cy, r)
            img[mask] = figures[cls] + rng.normal(scale=8.0, size=3)
            img += rng.normal(scale=6.0, size=img.shape)
            images.append(np.clip(img, 0, 255).astype(np.uint8))
            labels.append(cls)
    return np.stack(images), np.asarray(labels, dtype=np.int64), class_count


def _figure_mask(cls, xx, yy, cx, cy, r):
    kind = cls % 5
    if kind == 0:  # disc
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    if kind == 1:  # square
        return (np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= r)
    if kind == 2:  # horizontal bars
        return (np.abs(yy - cy) <= r) & (((xx // 4) % 2) == 0)
    if kind == 3:  # diamond
        return np.abs(xx - cx) + np.abs(yy - cy) <= 1.3 * r
    return (np.abs(xx - cx) <= r) & (((yy // 4) % 2) == 0)  # vertical bars


def _hue_wheel(n, value, offset):
    colors = []
    for i in range(n):
        h = (i / n + offset) % 1.0
        colors.append(_hsv_to_rgb(h, 0.85, value))
    return np.asarray(colors) * 255.0


def _hsv_to_rgb(h, s, v):
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def folder_dataset(root: Path, per_class: int):
    if not root.is_dir():
        raise DatasetError(f"dataset folder not found: {root}")
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise DatasetError("folder datasets need Pillow installed") from exc
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"{root} holds no class subdirectories")
    images, labels = [], []
    for cls, sub in enumerate(class_dirs):
        files = sorted(
            p for p in sub.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )[:per_class]
        if not files:
            raise DatasetError(f"{sub} holds no images")
        for f in files:
            with Image.open(f) as im:
                images.append(np.asarray(im.convert("RGB").resize((64, 64)), dtype=np.uint8))
            labels.append(cls)
    return np.stack(images), np.asarray(labels, dtype=np.int64), len(class_dirs)


def cifar10_dataset(root: Path, per_class: int):
    batch = root / "data_batch_1"
    if not batch.exists():
        raise DatasetError(f"cifar10 pickle batches not found under {root}")
    with open(batch, "rb") as fh:
        raw = pickle.load(fh, encoding="bytes")
    data = raw[b"data"].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    labels = np.asarray(raw[b"labels"], dtype=np.int64)
    images, keep_labels = [], []
    for cls in range(10):
        idx = np.flatnonzero(labels == cls)[:per_class]
        if idx.size < per_class:
            raise DatasetError(f"cifar10 batch holds fewer than {per_class} of class {cls}")
        images.append(data[idx])
        keep_labels.append(np.full(idx.size, cls, dtype=np.int64))
    return np.concatenate(images), np.concatenate(keep_labels), 10

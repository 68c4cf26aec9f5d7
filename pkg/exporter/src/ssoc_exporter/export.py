"""Export pipeline: encode, split open-world, write the engine's files.

The split mirrors the engine's protocol: the first ceil((1 - novel_ratio)
* C) classes are known, a label_ratio fraction of each known class keeps
its label, and every remaining image lands in the unlabeled set with its
ground truth written to a separate sidecar. Unlabeled rows carry two
independently augmented views of the same image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .datasets import load_dataset
from .encoder import ImageEncoder, augment_crop_rotate, to_float_tensor
from .formats import write_embeddings, write_labels


@dataclass(frozen=True)
class ExportSpec:
    dataset: str = "synthetic-shapes"
    encoder: str = "resnet18"
    weights: str = "random"
    images_per_class: int = 50
    label_ratio: float = 0.5
    novel_ratio: float = 0.5
    seed: int = 0
    augment: bool = True
    batch_size: int = 64

    def validate(self) -> "ExportSpec":
        if not (0.0 < self.label_ratio <= 1.0):
            raise ValueError(f"label_ratio must be in (0, 1], got {self.label_ratio}")
        if not (0.0 <= self.novel_ratio < 1.0):
            raise ValueError(f"novel_ratio must be in [0, 1), got {self.novel_ratio}")
        if self.images_per_class < 1:
            raise ValueError("images_per_class must be positive")
        return self


@dataclass
class ExportSummary:
    dim: int
    known_classes: int
    novel_classes: int
    labeled_rows: int
    unlabeled_rows: int
    files: dict


def run_export(spec: ExportSpec, out_dir) -> ExportSummary:
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    images, labels, class_count = load_dataset(
        spec.dataset, spec.images_per_class, spec.seed
    )
    encoder = ImageEncoder(spec.encoder, weights=spec.weights, seed=spec.seed)

    known = int(math.ceil((1.0 - spec.novel_ratio) * class_count))
    split_rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0xE096)))

    labeled_idx, labeled_y = [], []
    unlabeled_idx, truth = [], []
    for new_id in range(class_count):
        idx = np.flatnonzero(labels == new_id)
        perm = split_rng.permutation(idx)
        if new_id < known:
            n_lab = int(round(spec.label_ratio * len(idx)))
            labeled_idx.extend(perm[:n_lab])
            labeled_y.extend([new_id] * n_lab)
            unlabeled_idx.extend(perm[n_lab:])
            truth.extend([new_id] * (len(idx) - n_lab))
        else:
            unlabeled_idx.extend(perm)
            truth.extend([new_id] * len(idx))
    if not labeled_idx:
        raise ValueError("split produced an empty labeled set")

    labeled_imgs = to_float_tensor(images[np.asarray(labeled_idx)])
    unlabeled_imgs = to_float_tensor(images[np.asarray(unlabeled_idx)])

    gen = torch.Generator().manual_seed(spec.seed)
    if spec.augment:
        view1 = augment_crop_rotate(unlabeled_imgs, gen)
        view2 = augment_crop_rotate(unlabeled_imgs, gen)
    else:
        view1 = unlabeled_imgs
        view2 = unlabeled_imgs.clone()

    z_labeled = encoder.encode(labeled_imgs, spec.batch_size)
    z1 = encoder.encode(view1, spec.batch_size)
    z2 = encoder.encode(view2, spec.batch_size)

    files = {
        "labeled": out / "labeled.emb",
        "labeled_labels": out / "labeled.lab",
        "unlabeled": out / "unlabeled.emb",
        "truth": out / "truth.lab",
    }
    write_embeddings(files["labeled"], z_labeled)
    write_labels(files["labeled_labels"], np.asarray(labeled_y, dtype=np.int64))
    write_embeddings(files["unlabeled"], z1, z2)
    write_labels(files["truth"], np.asarray(truth, dtype=np.int64))

    return ExportSummary(
        dim=encoder.dim,
        known_classes=known,
        novel_classes=class_count - known,
        labeled_rows=len(labeled_idx),
        unlabeled_rows=len(unlabeled_idx),
        files=files,
    )

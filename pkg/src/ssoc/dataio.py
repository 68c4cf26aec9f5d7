"""Embedding dataset files, the open-world split protocol, and synthetic mixtures.

On-disk layout (all integers little-endian):

  embedding file:  magic ``SSOCEMB1`` | u32 row count | u32 dim | u8 views (1 or 2)
                   | rows x views x dim float32, row-major
  label sidecar:   magic ``SSOCLAB1`` | u32 count | count x int64 (-1 = unlabeled/unknown)

A dataset on disk is a labeled embedding file plus its label sidecar
(same stem, ``.lab`` extension), an unlabeled embedding file (one or two
views per row), and an optional ground-truth sidecar for the unlabeled
rows. The ground-truth sidecar is only ever opened when its path is
passed explicitly, so training code cannot read it by accident.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    GenerationFailedError,
    InvalidArgumentError,
    InvalidSplitError,
)
from .numerics import as_matrix

EMB_MAGIC = b"SSOCEMB1"
LAB_MAGIC = b"SSOCLAB1"

_CENTER_RETRIES = 64


@dataclass
class EmbeddingDataset:
    """Labeled and unlabeled embedding rows for one open-world problem."""

    dim: int
    labeled_z: np.ndarray  # (M, d) float64
    labeled_y: np.ndarray  # (M,) int64 in [0, S)
    unlabeled_z1: np.ndarray  # (N, d) float64
    unlabeled_z2: np.ndarray | None  # (N, d) float64 or None
    known_class_count: int
    novel_class_count: int
    ground_truth: np.ndarray | None = None  # (N,) int64 in [0, S + N_c), eval only

    @property
    def labeled_count(self) -> int:
        return self.labeled_z.shape[0]

    @property
    def unlabeled_count(self) -> int:
        return self.unlabeled_z1.shape[0]

    @property
    def class_count(self) -> int:
        return self.known_class_count + self.novel_class_count

    def validate(self) -> "EmbeddingDataset":
        for name, arr in (("labeled", self.labeled_z), ("unlabeled view1", self.unlabeled_z1)):
            if arr.ndim != 2 or arr.shape[1] != self.dim:
                raise InvalidArgumentError(f"{name} embeddings must be (n, {self.dim})")
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"{name} embeddings contain non-finite entries")
        if self.labeled_y.shape != (self.labeled_count,):
            raise InvalidArgumentError("labels must align one-to-one with labeled rows")
        if self.labeled_count and (
            self.labeled_y.min() < 0 or self.labeled_y.max() >= self.known_class_count
        ):
            raise InvalidArgumentError(
                f"labels must lie in [0, {self.known_class_count}), got range "
                f"[{self.labeled_y.min()}, {self.labeled_y.max()}]"
            )
        if self.unlabeled_z2 is not None and self.unlabeled_z2.shape != self.unlabeled_z1.shape:
            raise InvalidArgumentError("second views must align with first views")
        if self.ground_truth is not None:
            if self.ground_truth.shape != (self.unlabeled_count,):
                raise InvalidArgumentError("ground truth must align with unlabeled rows")
            if self.unlabeled_count and (
                self.ground_truth.min() < 0 or self.ground_truth.max() >= self.class_count
            ):
                raise InvalidArgumentError(
                    f"ground truth must lie in [0, {self.class_count})"
                )
        return self


@dataclass(frozen=True)
class SplitSpec:
    """How to carve a fully labeled pool into an open-world problem."""

    label_ratio: float
    novel_ratio: float
    seed: int
    shuffle_classes: bool = False  # default keeps the original class order

    def validate(self) -> "SplitSpec":
        if not (0.0 < self.label_ratio <= 1.0):
            raise InvalidArgumentError(f"label_ratio must be in (0, 1], got {self.label_ratio}")
        if not (0.0 <= self.novel_ratio < 1.0):
            raise InvalidArgumentError(f"novel_ratio must be in [0, 1), got {self.novel_ratio}")
        return self


@dataclass(frozen=True)
class MixtureSpec:
    """Isotropic Gaussian mixture for desk-scale experiments."""

    class_count: int
    dim: int
    samples_per_class: int
    center_separation: float  # minimum center gap, in multiples of within_class_std
    within_class_std: float
    seed: int

    def validate(self) -> "MixtureSpec":
        if self.class_count < 2:
            raise InvalidArgumentError(f"class_count must be >= 2, got {self.class_count}")
        if self.dim < 1 or self.samples_per_class < 1:
            raise InvalidArgumentError("dim and samples_per_class must be positive")
        if not self.center_separation > 0:
            raise InvalidArgumentError("center_separation must be > 0")
        if not self.within_class_std > 0:
            raise InvalidArgumentError("within_class_std must be > 0")
        return self


def generate_mixture(spec: MixtureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sample a seeded Gaussian mixture.

    Class centers are random directions on a common sphere, scaled so the
    minimum pairwise center distance equals exactly
    ``center_separation * within_class_std``; samples add isotropic noise
    around their center. Equal center norms keep dot-product and
    nearest-center classification equivalent on separated data. Same
    spec, same bytes.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    min_gap = spec.center_separation * spec.within_class_std

    centers = None
    for _ in range(_CENTER_RETRIES):
        raw = rng.normal(size=(spec.class_count, spec.dim))
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        if np.any(norms <= 1e-9):
            continue
        directions = raw / norms
        diffs = directions[:, None, :] - directions[None, :, :]
        dists = np.sqrt((diffs * diffs).sum(axis=2))
        dmin = dists[np.triu_indices(spec.class_count, k=1)].min()
        if dmin > 1e-3:  # nearly coincident directions make the scale blow up
            centers = directions * (min_gap / dmin)
            break
    if centers is None:
        raise GenerationFailedError(
            f"could not place {spec.class_count} separated centers in dimension {spec.dim}"
        )

    blocks = []
    for c in range(spec.class_count):
        noise = rng.normal(scale=spec.within_class_std, size=(spec.samples_per_class, spec.dim))
        blocks.append(centers[c] + noise)
    points = np.vstack(blocks)
    labels = np.repeat(np.arange(spec.class_count, dtype=np.int64), spec.samples_per_class)
    return points, labels


def mixture_centers(spec: MixtureSpec) -> np.ndarray:
    """The exact class centers ``generate_mixture`` used for this spec."""
    points, labels = generate_mixture(spec)
    return np.vstack([points[labels == c].mean(axis=0) for c in range(spec.class_count)])


def split_open_world(points, labels, split: SplitSpec) -> EmbeddingDataset:
    """Partition a labeled pool into known/novel classes and labeled/unlabeled rows.

    The first ``ceil((1 - novel_ratio) * C)`` classes (after an optional
    seeded class shuffle) become known. A ``label_ratio`` fraction of each
    known class keeps its label; everything else, including all novel
    samples, lands in the unlabeled set with ground truth retained.
    Classes are re-indexed so known classes occupy [0, S).
    """
    split.validate()
    points = as_matrix(points, "points")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (points.shape[0],):
        raise InvalidArgumentError("labels must align one-to-one with points")

    present = np.unique(labels)
    class_count = present.shape[0]
    if not np.array_equal(present, np.arange(class_count)):
        raise InvalidArgumentError("labels must cover classes 0..C-1 contiguously")

    rng = np.random.default_rng(split.seed)
    class_order = np.arange(class_count)
    if split.shuffle_classes:
        class_order = rng.permutation(class_count)

    known = int(math.ceil((1.0 - split.novel_ratio) * class_count))
    if known < 1:
        raise InvalidSplitError("split leaves zero known classes")
    novel = class_count - known

    labeled_rows, labeled_ys = [], []
    unlabeled_rows, truth = [], []
    for new_id, orig in enumerate(class_order):
        idx = np.flatnonzero(labels == orig)
        perm = rng.permutation(idx)
        if new_id < known:
            n_lab = int(round(split.label_ratio * len(idx)))
            labeled_rows.append(points[perm[:n_lab]])
            labeled_ys.append(np.full(n_lab, new_id, dtype=np.int64))
            unlabeled_rows.append(points[perm[n_lab:]])
            truth.append(np.full(len(idx) - n_lab, new_id, dtype=np.int64))
        else:
            unlabeled_rows.append(points[perm])
            truth.append(np.full(len(idx), new_id, dtype=np.int64))

    labeled_z = np.vstack(labeled_rows) if labeled_rows else np.empty((0, points.shape[1]))
    labeled_y = np.concatenate(labeled_ys) if labeled_ys else np.empty(0, dtype=np.int64)
    if labeled_z.shape[0] == 0:
        raise InvalidSplitError("split produced an empty labeled set")

    return EmbeddingDataset(
        dim=points.shape[1],
        labeled_z=labeled_z,
        labeled_y=labeled_y,
        unlabeled_z1=np.vstack(unlabeled_rows),
        unlabeled_z2=None,
        known_class_count=known,
        novel_class_count=novel,
        ground_truth=np.concatenate(truth),
    ).validate()


# ---------------------------------------------------------------------------
# binary file primitives


def write_embedding_file(path, z1, z2=None) -> None:
    z1 = as_matrix(z1, "view1")
    rows, dim = z1.shape
    views = 1 if z2 is None else 2
    if views == 2:
        z2 = as_matrix(z2, "view2")
        if z2.shape != z1.shape:
            raise InvalidArgumentError("view2 must match view1 shape")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<IIB", rows, dim, views))
        if views == 1:
            payload = z1.astype("<f4")
        else:
            payload = np.concatenate([z1, z2], axis=1).astype("<f4")
        fh.write(payload.tobytes(order="C"))


def read_embedding_file(path) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != EMB_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {EMB_MAGIC!r}")
        header = fh.read(9)
        if len(header) != 9:
            raise FormatError(f"{path}: truncated header")
        rows, dim, views = struct.unpack("<IIB", header)
        if views not in (1, 2):
            raise FormatError(f"{path}: views-per-row must be 1 or 2, got {views}")
        want = rows * views * dim
        payload = np.frombuffer(fh.read(want * 4), dtype="<f4")
        if payload.shape[0] != want:
            raise FormatError(
                f"{path}: truncated payload, expected {want} float32 values, "
                f"got {payload.shape[0]}"
            )
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    data = payload.astype(np.float64).reshape(rows, views * dim)
    if views == 1:
        return data, None
    return data[:, :dim].copy(), data[:, dim:].copy()


def write_label_file(path, labels) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise InvalidArgumentError("labels must be a 1-D array")
    with open(path, "wb") as fh:
        fh.write(LAB_MAGIC)
        fh.write(struct.pack("<I", labels.shape[0]))
        fh.write(labels.astype("<i8").tobytes(order="C"))


def read_label_file(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != LAB_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {LAB_MAGIC!r}")
        header = fh.read(4)
        if len(header) != 4:
            raise FormatError(f"{path}: truncated header")
        (count,) = struct.unpack("<I", header)
        payload = np.frombuffer(fh.read(count * 8), dtype="<i8")
        if payload.shape[0] != count:
            raise FormatError(
                f"{path}: truncated payload, expected {count} labels, got {payload.shape[0]}"
            )
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return payload.astype(np.int64)


def labels_path_for(embedding_path) -> Path:
    return Path(embedding_path).with_suffix(".lab")


# ---------------------------------------------------------------------------
# dataset-level read/write


def write_dataset(dataset: EmbeddingDataset, labeled_path, unlabeled_path, truth_path=None) -> None:
    """Write a dataset to its on-disk files.

    The labeled label sidecar goes next to ``labeled_path`` with a ``.lab``
    extension. Ground truth is written only when both the dataset carries
    it and ``truth_path`` is given.
    """
    dataset.validate()
    write_embedding_file(labeled_path, dataset.labeled_z)
    write_label_file(labels_path_for(labeled_path), dataset.labeled_y)
    write_embedding_file(unlabeled_path, dataset.unlabeled_z1, dataset.unlabeled_z2)
    if truth_path is not None:
        if dataset.ground_truth is None:
            raise InvalidArgumentError("dataset carries no ground truth to write")
        write_label_file(truth_path, dataset.ground_truth)


def read_dataset(
    labeled_path,
    unlabeled_path,
    truth_path=None,
    novel_class_count: int | None = None,
) -> EmbeddingDataset:
    """Load a dataset from its on-disk files.

    The known-class count comes from the labeled sidecar; the novel-class
    count comes from the ground-truth sidecar when ``truth_path`` is given,
    else from ``novel_class_count`` (default 0). Ground truth is never read
    unless its path is passed explicitly.
    """
    labeled_z, _ = read_embedding_file(labeled_path)
    labeled_y = read_label_file(labels_path_for(labeled_path))
    if labeled_y.shape[0] != labeled_z.shape[0]:
        raise FormatError(
            f"label count {labeled_y.shape[0]} does not match labeled row count "
            f"{labeled_z.shape[0]}"
        )
    if labeled_z.shape[0] == 0:
        raise FormatError(f"{labeled_path}: labeled file holds no rows")
    if labeled_y.min() < 0:
        raise FormatError("labeled sidecar contains unlabeled (-1) rows")

    z1, z2 = read_embedding_file(unlabeled_path)
    if z1.shape[1] != labeled_z.shape[1]:
        raise FormatError(
            f"dimension mismatch between files: labeled d={labeled_z.shape[1]}, "
            f"unlabeled d={z1.shape[1]}"
        )

    known = int(labeled_y.max()) + 1
    truth = None
    if truth_path is not None:
        truth = read_label_file(truth_path)
        if truth.shape[0] != z1.shape[0]:
            raise FormatError(
                f"ground-truth count {truth.shape[0]} does not match unlabeled row count "
                f"{z1.shape[0]}"
            )
        inferred = max(int(truth.max()) + 1 - known, 0) if truth.size else 0
        if novel_class_count is None:
            novel_class_count = inferred
        elif novel_class_count < inferred:
            raise FormatError(
                f"ground truth implies >= {inferred} novel classes, got {novel_class_count}"
            )
    if novel_class_count is None:
        novel_class_count = 0

    return EmbeddingDataset(
        dim=labeled_z.shape[1],
        labeled_z=labeled_z,
        labeled_y=labeled_y,
        unlabeled_z1=z1,
        unlabeled_z2=z2,
        known_class_count=known,
        novel_class_count=int(novel_class_count),
        ground_truth=truth,
    ).validate()

"""Initial class centers: K-means++ seeding, Lloyd refinement, random fallbacks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import ClassCenters
from .dataio import EmbeddingDataset
from .errors import DegenerateInputError, InvalidArgumentError, ShapeError
from .numerics import as_matrix, pairwise_sq_dists

INIT_KINDS = ("cluster_all", "cluster_known_random_novel", "random_all")


@dataclass(frozen=True)
class InitMode:
    kind: str = "cluster_all"
    seed: int = 0
    lloyd_max_iter: int = 100  # 0 = K-means++ seeding only
    lloyd_tol: float = 1e-6
    restarts: int = 10  # clustering reruns, lowest within-cluster SSE wins

    def validate(self) -> "InitMode":
        if self.kind not in INIT_KINDS:
            raise InvalidArgumentError(f"init kind must be one of {INIT_KINDS}, got {self.kind!r}")
        if self.lloyd_max_iter < 0 or self.lloyd_tol < 0:
            raise InvalidArgumentError("lloyd_max_iter and lloyd_tol must be nonnegative")
        if self.restarts < 1:
            raise InvalidArgumentError("restarts must be >= 1")
        return self


def kmeans_pp_seed(points, k: int, seed: int) -> np.ndarray:
    """K-means++ seeding: first center uniform, then D^2-weighted draws.

    Deterministic given the seed. Already-chosen points carry zero mass, so
    k distinct points with k = n yields every point exactly once.
    """
    points = as_matrix(points, "points")
    n = points.shape[0]
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    distinct = np.unique(points, axis=0).shape[0]
    if k > distinct:
        raise InvalidArgumentError(f"k={k} exceeds the {distinct} distinct points available")

    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = pairwise_sq_dists(points, points[chosen[-1]][None, :])[:, 0]
    while len(chosen) < k:
        total = d2.sum()
        nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, pairwise_sq_dists(points, points[nxt][None, :])[:, 0])
    return points[chosen].copy()


def assign_nearest(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the nearest center per point; ties break toward the lower index."""
    return np.argmin(pairwise_sq_dists(points, centers), axis=1)


def lloyd_refine(points, centers, max_iter: int = 100, tol: float = 1e-6) -> np.ndarray:
    """Alternate nearest-center assignment and mean updates.

    Empty clusters are re-seeded to the point currently farthest from its
    assigned center, which keeps the within-cluster sum of squares
    non-increasing. Stops when the largest center movement drops below
    ``tol`` or after ``max_iter`` rounds.
    """
    points = as_matrix(points, "points")
    centers = as_matrix(centers, "centers").copy()
    if points.shape[1] != centers.shape[1]:
        raise ShapeError("points and centers disagree on dimension")
    k = centers.shape[0]

    for _ in range(max_iter):
        d2 = pairwise_sq_dists(points, centers)
        assign = np.argmin(d2, axis=1)
        own = d2[np.arange(points.shape[0]), assign].copy()

        new = np.zeros_like(centers)
        counts = np.bincount(assign, minlength=k)
        np.add.at(new, assign, points)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        for j in np.flatnonzero(~nonempty):
            far = int(np.argmax(own))
            new[j] = points[far]
            own[far] = -np.inf  # each empty cluster grabs a different point

        movement = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if movement < tol:
            break
    return centers


def init_class_centers(dataset: EmbeddingDataset, mode: InitMode) -> ClassCenters:
    """Build the initial (S + N_c) x d center matrix for a dataset.

    cluster_all clusters every available embedding and then permutes the
    cluster rows so row j (j < S) is the cluster holding the most labeled
    samples of class j; the remaining clusters fill the novel rows in
    ascending cluster order. The greedy assignment processes (cluster,
    class) pairs by descending labeled count, ties toward the lower cluster
    then class index.
    """
    mode.validate()
    dataset.validate()
    k = dataset.class_count
    if k < 1:
        raise InvalidArgumentError("dataset declares zero classes")

    pool = (
        np.vstack([dataset.labeled_z, dataset.unlabeled_z1])
        if dataset.unlabeled_count
        else dataset.labeled_z
    )
    if pool.shape[0] == 0:
        raise InvalidArgumentError("dataset holds no embeddings")
    # tagged stream: must never coincide with a data generator seeded with
    # the same integer
    rng = np.random.default_rng(np.random.SeedSequence((mode.seed, 0x1A17)))
    known = dataset.known_class_count

    if mode.kind == "cluster_all":
        if k > pool.shape[0]:
            raise InvalidArgumentError(f"cannot place {k} centers with {pool.shape[0]} samples")
        best = None
        for r in range(mode.restarts):
            sub_seed = int(
                np.random.SeedSequence((mode.seed, r)).generate_state(1)[0]
            )
            centers = kmeans_pp_seed(pool, k, sub_seed)
            if mode.lloyd_max_iter > 0:
                centers = lloyd_refine(pool, centers, mode.lloyd_max_iter, mode.lloyd_tol)
            score = float(pairwise_sq_dists(pool, centers).min(axis=1).sum())
            if best is None or score < best[0]:
                best = (score, centers)
        centers = best[1]
        order = _align_known_rows(centers, dataset, known)
        return ClassCenters(centers=centers[order].copy())

    mean_norm = _reference_norm(dataset, pool)
    if mode.kind == "cluster_known_random_novel":
        rows = np.empty((k, dataset.dim))
        for j in range(known):
            members = dataset.labeled_z[dataset.labeled_y == j]
            if members.shape[0] == 0:
                raise DegenerateInputError(f"known class {j} has no labeled samples to average")
            rows[j] = members.mean(axis=0)
        for j in range(known, k):
            rows[j] = _random_direction(rng, dataset.dim) * mean_norm
        return ClassCenters(centers=rows)

    # random_all
    rows = np.vstack([_random_direction(rng, dataset.dim) * mean_norm for _ in range(k)])
    return ClassCenters(centers=rows)


def _random_direction(rng: np.random.Generator, dim: int) -> np.ndarray:
    g = rng.normal(size=dim)
    return g / np.linalg.norm(g)


def _reference_norm(dataset: EmbeddingDataset, pool: np.ndarray) -> float:
    # mean labeled-embedding norm; fall back to the whole pool when unlabeled-only
    source = dataset.labeled_z if dataset.labeled_count else pool
    return float(np.linalg.norm(source, axis=1).mean())


def _align_known_rows(centers: np.ndarray, dataset: EmbeddingDataset, known: int) -> np.ndarray:
    k = centers.shape[0]
    counts = np.zeros((k, known), dtype=np.int64)
    if dataset.labeled_count:
        assign = assign_nearest(dataset.labeled_z, centers)
        np.add.at(counts, (assign, dataset.labeled_y), 1)

    row_of_class = np.full(known, -1, dtype=np.int64)
    free_clusters = set(range(k))
    free_classes = set(range(known))
    while free_classes:
        best = None
        for c in sorted(free_clusters):
            for j in sorted(free_classes):
                key = (counts[c, j], -c, -j)
                if best is None or key > best[0]:
                    best = (key, c, j)
        _, c, j = best
        row_of_class[j] = c
        free_clusters.remove(c)
        free_classes.remove(j)

    order = list(row_of_class) + sorted(free_clusters)
    return np.asarray(order, dtype=np.int64)

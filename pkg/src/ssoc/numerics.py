"""Minimal dense-matrix kernels shared by every other module.

All public functions operate on float64 numpy arrays and are pure.
Reductions rely on numpy's fixed summation order, so repeated calls on
identical inputs give bit-identical results regardless of how many BLAS
threads are allowed.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError, NumericalError, ShapeError

NORM_EPS = 1e-12


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce input to a 2-D float64 array (no copy when already one)."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name}: expected 2 dimensions, got {m.ndim}")
    return m


def check_finite(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"{name} contains NaN or Inf entries")
    return m


def row_softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``logits / temperature``.

    Uses per-row max subtraction, so any finite logits are safe. Each
    output row is nonnegative and sums to 1.
    """
    if not temperature > 0:
        raise InvalidArgumentError(f"temperature must be positive, got {temperature!r}")
    m = check_finite(as_matrix(logits, "logits"), "logits")
    scaled = m / float(temperature)
    shifted = scaled - scaled.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, clamped into [-1, 1]."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateInputError("cosine similarity of a (near-)zero vector is undefined")
    return float(np.clip(float(a @ b) / (na * nb), -1.0, 1.0))


def l2_normalize_rows(m) -> np.ndarray:
    """Scale every row to unit L2 norm, preserving direction."""
    m = as_matrix(m)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise DegenerateInputError("cannot normalize a (near-)zero row")
    return m / norms


def pairwise_cosine(m) -> np.ndarray:
    """All-pairs cosine similarity between rows, clamped into [-1, 1]."""
    normed = l2_normalize_rows(m)
    return np.clip(normed @ normed.T, -1.0, 1.0)


def pairwise_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (len(points), len(centers)).

    Computed via the expanded form; tiny negatives from cancellation are
    clipped to zero.
    """
    points = as_matrix(points, "points")
    centers = as_matrix(centers, "centers")
    if points.shape[1] != centers.shape[1]:
        raise ShapeError(
            f"dimension mismatch: points d={points.shape[1]}, centers d={centers.shape[1]}"
        )
    d2 = (
        (points * points).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * (points @ centers.T)
    )
    return np.maximum(d2, 0.0)

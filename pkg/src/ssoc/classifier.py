"""Class posteriors from dot-product similarity, pseudo-labels, and inference.

During training, rows are scored against the current batch increments
(labeled rows with a flattening temperature, unlabeled rows at
temperature 1). Inference scores against the accumulated centers, so
predictions are batch-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import ClassCenters
from .errors import InvalidArgumentError, ShapeError
from .numerics import as_matrix, row_softmax


@dataclass
class BatchProbabilities:
    """Row-stochastic posteriors with argmax pseudo-labels and row-max confidences."""

    probs: np.ndarray  # (B, S + N_c)
    pseudo_labels: np.ndarray  # (B,) int64
    confidences: np.ndarray  # (B,)


def predict_probs(z, centers_for_scoring, is_labeled, epsilon: float) -> BatchProbabilities:
    """Temperature-split posteriors over (S + N_c) classes.

    Logits are plain dot products ``z @ centers^T``; labeled rows divide
    theirs by ``epsilon`` (flatter for epsilon > 1), unlabeled rows use
    temperature 1. During training the scoring matrix is the batch's
    attention increment; at evaluation time it is the accumulated centers.
    """
    if not epsilon > 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon!r}")
    z = as_matrix(z, "batch")
    centers = _scoring_matrix(centers_for_scoring)
    if z.shape[1] != centers.shape[1]:
        raise ShapeError(f"batch dim {z.shape[1]} does not match centers dim {centers.shape[1]}")
    is_labeled = np.asarray(is_labeled, dtype=bool)
    if is_labeled.shape != (z.shape[0],):
        raise ShapeError("is_labeled must provide one flag per batch row")

    logits = z @ centers.T
    temps = np.where(is_labeled, float(epsilon), 1.0)
    probs = row_softmax(logits / temps[:, None], 1.0)
    return BatchProbabilities(
        probs=probs,
        pseudo_labels=np.argmax(probs, axis=1).astype(np.int64),
        confidences=probs.max(axis=1),
    )


def probs_backward(
    batch_probs: BatchProbabilities, d_probs, z, centers_for_scoring, epsilon: float, is_labeled
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the posterior map w.r.t. the batch and the scoring matrix."""
    p = batch_probs.probs
    d_probs = as_matrix(d_probs, "d_probs")
    if d_probs.shape != p.shape:
        raise ShapeError(f"d_probs shape {d_probs.shape} does not match probs {p.shape}")
    z = as_matrix(z, "batch")
    centers = _scoring_matrix(centers_for_scoring)
    is_labeled = np.asarray(is_labeled, dtype=bool)

    inner = (d_probs * p).sum(axis=1, keepdims=True)
    d_scaled = p * (d_probs - inner)  # gradient w.r.t. logits / temperature
    temps = np.where(is_labeled, float(epsilon), 1.0)
    d_logits = d_scaled / temps[:, None]
    d_z = d_logits @ centers
    d_centers = d_logits.T @ z
    return d_z, d_centers


def infer(z, final_centers) -> np.ndarray:
    """Argmax class per row against stored centers; ties break toward the lower index."""
    z = as_matrix(z, "batch")
    centers = _scoring_matrix(final_centers)
    return np.argmax(z @ centers.T, axis=1).astype(np.int64)


def inference_confidences(z, final_centers) -> np.ndarray:
    """Row-max softmax confidence of the inference scores (temperature 1)."""
    z = as_matrix(z, "batch")
    centers = _scoring_matrix(final_centers)
    return row_softmax(z @ centers.T, 1.0).max(axis=1)


def write_predictions(path, predictions, confidences) -> None:
    """One ``index,predicted_class,confidence`` line per sample."""
    predictions = np.asarray(predictions)
    confidences = np.asarray(confidences, dtype=np.float64)
    if predictions.shape != confidences.shape:
        raise ShapeError("predictions and confidences must align")
    with open(path, "w", encoding="utf-8") as fh:
        for i, (c, p) in enumerate(zip(predictions, confidences)):
            fh.write(f"{i},{int(c)},{p:.6f}\n")


def _scoring_matrix(centers_for_scoring) -> np.ndarray:
    if isinstance(centers_for_scoring, ClassCenters):
        return centers_for_scoring.centers
    return as_matrix(centers_for_scoring, "centers")

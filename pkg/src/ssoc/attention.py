"""Cross-attention over class centers: forward, analytic backward, residual update.

The layer holds three square matrices w_q, w_k, w_v. Centers act as
queries, embeddings as keys and values:

    Q = A w_q,  K = Z w_k,  V = Z w_v
    delta = row_softmax(Q K^T / sqrt(d)) V
    A'    = A + delta   (optionally row-normalized)

The backward pass composes the per-row softmax Jacobian
``diag(s) - s s^T`` with the three bilinear maps and is validated against
central finite differences in the test suite.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError, ShapeError
from .numerics import as_matrix, check_finite, l2_normalize_rows, row_softmax

MODEL_MAGIC = b"SSOCMDL1"

NORM_MODES = ("none", "l2")


@dataclass
class AttentionParams:
    """The three d x d weight matrices of the cross-attention layer."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_k(self) -> int:
        return self.w_k.shape[1]

    def validate(self) -> "AttentionParams":
        d = self.w_q.shape[0]
        for name, w in (("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)):
            if w.shape != (d, d):
                raise ShapeError(f"{name} must be ({d}, {d}), got {w.shape}")
            check_finite(w, name)
        return self

    def copy(self) -> "AttentionParams":
        return AttentionParams(self.w_q.copy(), self.w_k.copy(), self.w_v.copy())


@dataclass
class ClassCenters:
    """One prototype row per open-world class, plus the update step counter."""

    centers: np.ndarray  # (S + N_c, d)
    step: int = 0

    @property
    def count(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


@dataclass
class AttentionCache:
    """Forward intermediates needed by the backward pass."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    weights: np.ndarray  # (S + N_c, B), rows sum to 1
    z: np.ndarray
    centers: np.ndarray
    params: "AttentionParams"


def init_attention_params(
    dim: int,
    seed: int,
    mode: str = "calibrated",
    query_key_scale: float = 1.0,
    value_scale: float = 1.0,
) -> AttentionParams:
    """Fresh layer weights.

    ``calibrated`` starts the layer as a scaled pass-through: w_q and w_k
    carry ``query_key_scale`` and w_v carries ``value_scale`` on the
    diagonal. The trainer derives those scales from the data so the
    initial attention logits are sharp enough to track clusters while the
    classification logits stay in a soft softmax range; the two scales
    would otherwise be rigidly coupled through the shared embeddings.
    ``identity`` is the unscaled pass-through, ``gaussian`` draws all
    three matrices from N(0, 1/d).
    """
    if mode == "calibrated":
        eye = np.eye(dim)
        return AttentionParams(
            query_key_scale * eye, query_key_scale * eye, value_scale * eye
        )
    if mode == "identity":
        eye = np.eye(dim)
        return AttentionParams(eye.copy(), eye.copy(), eye.copy())
    if mode == "gaussian":
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x9A55)))
        scale = 1.0 / math.sqrt(dim)
        return AttentionParams(
            rng.normal(scale=scale, size=(dim, dim)),
            rng.normal(scale=scale, size=(dim, dim)),
            rng.normal(scale=scale, size=(dim, dim)),
        )
    raise InvalidArgumentError(f"unknown attention init mode {mode!r}")


def cross_attention_forward(
    centers: ClassCenters, z, params: AttentionParams
) -> tuple[np.ndarray, AttentionCache]:
    """Per-batch center increments: each output row is a convex combination of V rows."""
    z = check_finite(as_matrix(z, "batch"), "batch")
    a = centers.centers
    if z.shape[1] != a.shape[1]:
        raise ShapeError(f"batch dim {z.shape[1]} does not match center dim {a.shape[1]}")
    if z.shape[0] < 1:
        raise InvalidArgumentError("batch must hold at least one row")
    params.validate()
    if params.dim != a.shape[1]:
        raise ShapeError(f"params dim {params.dim} does not match center dim {a.shape[1]}")

    q = a @ params.w_q
    k = z @ params.w_k
    v = z @ params.w_v
    logits = (q @ k.T) / math.sqrt(params.d_k)
    weights = row_softmax(logits, 1.0)
    delta = weights @ v
    cache = AttentionCache(
        q=q, k=k, v=v, weights=weights, z=z, centers=a.copy(), params=params
    )
    return delta, cache


def softmax_rows_backward(softmax_out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Apply the row-wise softmax Jacobian diag(s) - s s^T to an upstream gradient."""
    inner = (grad_out * softmax_out).sum(axis=1, keepdims=True)
    return softmax_out * (grad_out - inner)


def cross_attention_backward(
    cache: AttentionCache, d_delta
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of the forward map w.r.t. w_q, w_k, w_v and the batch.

    The batch gradient accumulates both the key path and the value path; it
    is returned for completeness even when the embeddings are frozen.
    """
    d_delta = as_matrix(d_delta, "d_delta")
    if d_delta.shape != (cache.weights.shape[0], cache.v.shape[1]):
        raise ShapeError(
            f"d_delta shape {d_delta.shape} does not match forward output "
            f"({cache.weights.shape[0]}, {cache.v.shape[1]})"
        )
    scale = 1.0 / math.sqrt(cache.k.shape[1])

    d_weights = d_delta @ cache.v.T
    d_v = cache.weights.T @ d_delta
    d_logits = softmax_rows_backward(cache.weights, d_weights)
    d_q = (d_logits @ cache.k) * scale
    d_k = (d_logits.T @ cache.q) * scale

    d_wq = cache.centers.T @ d_q
    d_wk = cache.z.T @ d_k
    d_wv = cache.z.T @ d_v
    d_z = d_k @ cache.params.w_k.T + d_v @ cache.params.w_v.T
    return d_wq, d_wk, d_wv, d_z


def update_centers(centers: ClassCenters, delta, norm_mode: str = "none") -> ClassCenters:
    """Residual center update; the result is a detached copy of the new state."""
    if norm_mode not in NORM_MODES:
        raise InvalidArgumentError(f"norm_mode must be one of {NORM_MODES}, got {norm_mode!r}")
    delta = as_matrix(delta, "delta")
    if delta.shape != centers.centers.shape:
        raise ShapeError(
            f"delta shape {delta.shape} does not match centers {centers.centers.shape}"
        )
    new = centers.centers + delta
    if norm_mode == "l2":
        new = l2_normalize_rows(new)
    return ClassCenters(centers=new.copy(), step=centers.step + 1)


# ---------------------------------------------------------------------------
# model checkpoint


def save_model_checkpoint(
    path, params: AttentionParams, centers: ClassCenters, known: int, novel: int
) -> None:
    params.validate()
    d = params.dim
    if centers.count != known + novel:
        raise InvalidArgumentError(
            f"centers hold {centers.count} rows but known+novel = {known + novel}"
        )
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<III", d, known, novel))
        for block in (params.w_q, params.w_k, params.w_v, centers.centers):
            fh.write(block.astype("<f4").tobytes(order="C"))


def load_model_checkpoint(path) -> tuple[AttentionParams, ClassCenters, int, int]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MODEL_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        header = fh.read(12)
        if len(header) != 12:
            raise FormatError(f"{path}: truncated header")
        d, known, novel = struct.unpack("<III", header)
        blocks = []
        for name, shape in (
            ("w_q", (d, d)),
            ("w_k", (d, d)),
            ("w_v", (d, d)),
            ("centers", (known + novel, d)),
        ):
            want = shape[0] * shape[1]
            raw = np.frombuffer(fh.read(want * 4), dtype="<f4")
            if raw.shape[0] != want:
                raise FormatError(f"{path}: truncated {name} block")
            blocks.append(raw.astype(np.float64).reshape(shape))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    params = AttentionParams(blocks[0], blocks[1], blocks[2]).validate()
    return params, ClassCenters(centers=blocks[3]), known, novel

"""Training objectives: supervised CE, gated pseudo CE, pairwise BCE, entropy term.

Every operation returns its scalar value together with the exact gradient
of the *clamped* objective with respect to the posterior matrix (and,
for the pairwise term, optionally the embeddings through the cosine
targets). Probabilities are clamped at ``prob_floor`` before any log;
clamped entries get zero gradient, so finite differences and analytic
gradients agree everywhere the clamp is inactive.

Confidence gates are indicator functions treated as constants: no
gradient flows through a threshold comparison.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .numerics import as_matrix, pairwise_cosine

log = logging.getLogger(__name__)

ENTROPY_MODES = ("per_sample", "batch_marginal")


@dataclass(frozen=True)
class LossWeights:
    """Balance weights, confidence thresholds, and the log-clamp floor."""

    alpha: float = 1.0  # pairwise BCE weight
    beta: float = 0.5  # entropy regularizer weight
    gamma: float = 1.0  # supervised CE weight
    delta: float = 1.0  # pseudo CE weight
    tau1: float = 0.6  # pseudo-label confidence gate
    tau2: float = 0.8  # pairwise confidence gate
    prob_floor: float = 1e-9

    def validate(self) -> "LossWeights":
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"{name} must be nonnegative")
        for name in ("tau1", "tau2"):
            t = getattr(self, name)
            if not (0.0 <= t <= 1.0):
                raise InvalidArgumentError(f"{name} must lie in [0, 1], got {t}")
        if not (0.0 < self.prob_floor <= 1e-3):
            raise InvalidArgumentError(f"prob_floor must lie in (0, 1e-3], got {self.prob_floor}")
        return self


@dataclass
class LossBreakdown:
    total: float
    ce_labeled: float
    ce_pseudo: float
    bce_pair: float
    entropy_reg: float
    selected_pseudo_count: int
    selected_pair_count: int


def supervised_ce(p_labeled, y_labeled, prob_floor: float = 1e-9) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of labeled rows against their one-hot targets."""
    p = as_matrix(p_labeled, "p_labeled")
    y = np.asarray(y_labeled, dtype=np.int64)
    if y.shape != (p.shape[0],):
        raise ShapeError("labels must align one-to-one with labeled rows")
    if p.shape[0] == 0:
        log.debug("supervised_ce: empty labeled batch, contributing zero")
        return 0.0, np.zeros_like(p)
    if p.shape[0] and (y.min() < 0 or y.max() >= p.shape[1]):
        raise InvalidArgumentError("label out of range for the posterior width")

    rows = np.arange(p.shape[0])
    picked = p[rows, y]
    clamped = np.maximum(picked, prob_floor)
    value = float(-np.log(clamped).mean())
    grad = np.zeros_like(p)
    live = picked > prob_floor
    grad[rows[live], y[live]] = -1.0 / (p.shape[0] * picked[live])
    return value, grad


def pseudo_ce(
    p_view1, pseudo_labels2, confidences2, tau1: float, prob_floor: float = 1e-9
) -> tuple[float, np.ndarray, int]:
    """Cross-view pseudo cross-entropy over confidence-gated unlabeled rows.

    Row i contributes ``-log p1[i, y2_i]`` only when the second view's
    confidence exceeds ``tau1``; gated-out rows contribute neither value
    nor gradient. Normalized by the number of unlabeled rows in the batch,
    not the number selected.
    """
    p1 = as_matrix(p_view1, "p_view1")
    y2 = np.asarray(pseudo_labels2, dtype=np.int64)
    c2 = np.asarray(confidences2, dtype=np.float64)
    if y2.shape != (p1.shape[0],) or c2.shape != (p1.shape[0],):
        raise ShapeError("view-2 pseudo-labels and confidences must align with view-1 rows")

    grad = np.zeros_like(p1)
    if p1.shape[0] == 0:
        return 0.0, grad, 0
    selected = c2 > tau1
    n_sel = int(selected.sum())
    if n_sel == 0:
        log.debug("pseudo_ce: gate closed for the whole batch")
        return 0.0, grad, 0

    rows = np.flatnonzero(selected)
    picked = p1[rows, y2[rows]]
    clamped = np.maximum(picked, prob_floor)
    value = float(-np.log(clamped).sum() / p1.shape[0])
    live = picked > prob_floor
    grad[rows[live], y2[rows[live]]] = -1.0 / (p1.shape[0] * picked[live])
    return value, grad, n_sel


def pairwise_bce(
    p,
    z,
    labels,
    confidences,
    tau2: float,
    prob_floor: float = 1e-9,
    z_grad: bool = False,
) -> tuple[float, np.ndarray, np.ndarray | None, int]:
    """Binary cross-entropy between posterior inner products and pair targets.

    Runs over unordered within-batch pairs i < j whose confidences both
    exceed ``tau2``. Pairs of labeled rows target 1 or 0 from label
    equality; every other pair targets the cosine similarity of the
    embeddings clamped into [0, 1]. ``labels`` uses -1 for unlabeled rows.
    The embedding gradient through the cosine targets is only computed
    when ``z_grad`` is set (the default assumes frozen embeddings).
    """
    p = as_matrix(p, "p")
    z = as_matrix(z, "z")
    labels = np.asarray(labels, dtype=np.int64)
    conf = np.asarray(confidences, dtype=np.float64)
    b = p.shape[0]
    if z.shape[0] != b or labels.shape != (b,) or conf.shape != (b,):
        raise ShapeError("p, z, labels, and confidences must align row-to-row")

    d_p = np.zeros_like(p)
    d_z = np.zeros_like(z) if z_grad else None
    if b < 2:
        return 0.0, d_p, d_z, 0

    gate = np.minimum(conf[:, None], conf[None, :]) > tau2
    iu = np.triu_indices(b, k=1)
    sel = gate[iu]
    n_sel = int(sel.sum())
    if n_sel == 0:
        log.debug("pairwise_bce: no pair passed the confidence gate")
        return 0.0, d_p, d_z, 0

    lab = labels >= 0
    both_lab = lab[:, None] & lab[None, :]
    cos = pairwise_cosine(z)
    targets = np.where(both_lab, (labels[:, None] == labels[None, :]).astype(np.float64),
                       np.clip(cos, 0.0, 1.0))

    q_raw = p @ p.T
    q = np.clip(q_raw, prob_floor, 1.0 - prob_floor)

    s_ij = targets[iu][sel]
    q_ij = q[iu][sel]
    value = float(-(s_ij * np.log(q_ij) + (1.0 - s_ij) * np.log(1.0 - q_ij)).sum() / n_sel)

    # d(value)/dq on selected, unclamped pairs, as a symmetric matrix
    dq = np.zeros((b, b))
    live = (q_raw[iu] > prob_floor) & (q_raw[iu] < 1.0 - prob_floor)
    vals = -(s_ij / q_ij - (1.0 - s_ij) / (1.0 - q_ij)) / n_sel
    vals = np.where(live[sel], vals, 0.0)
    dq[iu[0][sel], iu[1][sel]] = vals
    dq = dq + dq.T
    d_p[:] = dq @ p

    if z_grad:
        # d(value)/dS on selected pairs with an active cosine target
        ds = np.zeros((b, b))
        raw_cos = cos[iu]
        cos_live = (~both_lab[iu]) & (raw_cos > 0.0) & (raw_cos < 1.0) & sel
        ds_vals = -(np.log(q[iu]) - np.log(1.0 - q[iu])) / n_sel
        ds[iu[0][cos_live], iu[1][cos_live]] = ds_vals[cos_live]
        ds = ds + ds.T
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        zn = z / norms
        g = ds @ zn
        d_z[:] = (g - (g * zn).sum(axis=1, keepdims=True) * zn) / norms
    return value, d_p, d_z, n_sel


def entropy_reg(p, prob_floor: float = 1e-9, mode: str = "per_sample") -> tuple[float, np.ndarray]:
    """Negative mean per-row entropy: minimizing this flattens posteriors.

    ``batch_marginal`` applies the same formula to the batch-mean
    posterior instead, spreading the average prediction rather than each
    row.
    """
    p = as_matrix(p, "p")
    if mode not in ENTROPY_MODES:
        raise InvalidArgumentError(f"entropy mode must be one of {ENTROPY_MODES}, got {mode!r}")
    if p.shape[0] == 0:
        return 0.0, np.zeros_like(p)
    if mode == "per_sample":
        clamped = np.maximum(p, prob_floor)
        value = float((p * np.log(clamped)).sum() / p.shape[0])
        grad = np.where(p > prob_floor, np.log(clamped) + 1.0, np.log(prob_floor)) / p.shape[0]
        return value, grad
    mean = p.mean(axis=0)
    clamped = np.maximum(mean, prob_floor)
    value = float((mean * np.log(clamped)).sum())
    row = np.where(mean > prob_floor, np.log(clamped) + 1.0, np.log(prob_floor))
    grad = np.tile(row / p.shape[0], (p.shape[0], 1))
    return value, grad


def total_loss(
    ce_labeled: tuple[float, np.ndarray],
    ce_pseudo: tuple[float, np.ndarray, int],
    bce_pair: tuple[float, np.ndarray, np.ndarray | None, int],
    entropy: tuple[float, np.ndarray],
    weights: LossWeights,
    n_labeled: int,
) -> tuple[LossBreakdown, np.ndarray, np.ndarray | None]:
    """Weighted sum of the four objectives over one scored batch.

    The scored frame is labeled rows followed by unlabeled view-1 rows;
    the labeled-CE gradient occupies the first ``n_labeled`` rows and the
    pseudo-CE gradient the rest. Returns the breakdown plus the combined
    gradient w.r.t. the posteriors (and embeddings when the pairwise term
    produced one).
    """
    weights.validate()
    ce_l_value, d_ce_l = ce_labeled
    ce_u_value, d_ce_u, n_pseudo = ce_pseudo
    bce_value, d_bce, d_z_bce, n_pairs = bce_pair
    re_value, d_re = entropy

    if d_bce.shape != d_re.shape:
        raise ShapeError("pairwise and entropy gradients must share the scored frame")
    frame_rows = d_bce.shape[0]
    if d_ce_l.shape[0] != n_labeled or d_ce_u.shape[0] != frame_rows - n_labeled:
        raise ShapeError("component gradients do not tile the scored frame")

    total = (
        weights.gamma * ce_l_value
        + weights.delta * ce_u_value
        + weights.alpha * bce_value
        + weights.beta * re_value
    )
    d_p = weights.alpha * d_bce + weights.beta * d_re
    d_p[:n_labeled] += weights.gamma * d_ce_l
    d_p[n_labeled:] += weights.delta * d_ce_u
    d_z = None if d_z_bce is None else weights.alpha * d_z_bce

    breakdown = LossBreakdown(
        total=float(total),
        ce_labeled=float(ce_l_value),
        ce_pseudo=float(ce_u_value),
        bce_pair=float(bce_value),
        entropy_reg=float(re_value),
        selected_pseudo_count=int(n_pseudo),
        selected_pair_count=int(n_pairs),
    )
    return breakdown, d_p, d_z

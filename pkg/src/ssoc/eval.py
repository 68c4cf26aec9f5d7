"""Open-world evaluation: Hungarian label alignment, accuracies, novel-class NMI.

Seen accuracy is computed directly because known-class indices are fixed
from initialization onward. Novel and all-class accuracies first align
predicted columns to ground-truth classes with a maximum-weight
assignment over the confusion matrix. NMI uses the arithmetic-mean
normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidArgumentError, NumericalError, ShapeError
from .numerics import as_matrix


@dataclass
class AlignmentResult:
    """Injective predicted-class -> ground-truth-class map and its matched weight."""

    mapping: dict[int, int]
    matched_weight: float


@dataclass
class EvalReport:
    seen_acc: float
    novel_acc: float | None
    all_acc: float
    novel_nmi: float | None

    def csv_row(self) -> str:
        def fmt(x):
            return "nan" if x is None else f"{x:.6f}"

        return ",".join(fmt(v) for v in (self.seen_acc, self.novel_acc, self.all_acc, self.novel_nmi))

    def summary(self) -> str:
        parts = [f"seen_acc={self.seen_acc:.4f}"]
        parts.append("novel_acc=n/a" if self.novel_acc is None else f"novel_acc={self.novel_acc:.4f}")
        parts.append(f"all_acc={self.all_acc:.4f}")
        parts.append("novel_nmi=n/a" if self.novel_nmi is None else f"novel_nmi={self.novel_nmi:.4f}")
        return "  ".join(parts)


def hungarian(weights) -> tuple[np.ndarray, float]:
    """Maximum-weight perfect matching on a square (or zero-padded) matrix.

    Returns the column assigned to each row and the total matched weight.
    Rectangular inputs are zero-padded to square, so every row gets a
    column; padded rows carry zero weight.
    """
    w = as_matrix(weights, "weights")
    if not np.all(np.isfinite(w)):
        raise NumericalError("assignment weights must be finite")
    n = max(w.shape)
    padded = np.zeros((n, n))
    padded[: w.shape[0], : w.shape[1]] = w
    rows, cols = linear_sum_assignment(padded, maximize=True)
    assignment = np.empty(n, dtype=np.int64)
    assignment[rows] = cols
    total = float(padded[rows, cols].sum())
    return assignment, total


def confusion_matrix(truth, predictions, n_rows: int, n_cols: int) -> np.ndarray:
    counts = np.zeros((n_rows, n_cols), dtype=np.int64)
    np.add.at(counts, (np.asarray(truth), np.asarray(predictions)), 1)
    return counts


def evaluate(
    predictions, ground_truth, known: int, restrict_novel_columns: bool = False
) -> EvalReport:
    """Seen/novel/all accuracies and novel NMI for one prediction vector.

    ``restrict_novel_columns`` limits the novel alignment to columns in
    [known, total); by default novel ground-truth classes may claim any
    predicted column.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(ground_truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ShapeError("predictions and ground truth must align")
    if pred.size == 0:
        raise InvalidArgumentError("cannot evaluate an empty prediction set")
    total_classes = max(int(truth.max()), int(pred.max())) + 1
    if known > total_classes:
        total_classes = known

    seen_mask = truth < known
    novel_mask = ~seen_mask
    seen_acc = float((pred[seen_mask] == truth[seen_mask]).mean()) if seen_mask.any() else 0.0

    full = confusion_matrix(truth, pred, total_classes, total_classes)
    _, matched = hungarian(full.astype(np.float64))
    all_acc = matched / pred.size

    novel_acc = None
    novel_nmi_value = None
    if novel_mask.any():
        novel_truth = truth[novel_mask] - known
        novel_pred = pred[novel_mask]
        if restrict_novel_columns:
            cols = confusion_matrix(
                novel_truth, novel_pred, total_classes - known, total_classes
            )[:, known:]
        else:
            cols = confusion_matrix(novel_truth, novel_pred, total_classes - known, total_classes)
        _, matched_novel = hungarian(cols.astype(np.float64))
        novel_acc = matched_novel / novel_pred.size
        novel_nmi_value = nmi(novel_truth, novel_pred)

    return EvalReport(
        seen_acc=seen_acc,
        novel_acc=novel_acc,
        all_acc=float(all_acc),
        novel_nmi=novel_nmi_value,
    )


def novel_column_mapping(predictions, ground_truth, known: int) -> dict[int, int]:
    """Best injective map from predicted columns to novel ground-truth classes.

    Computed by maximum-weight matching on the novel-row confusion matrix,
    allowing novel classes to claim any predicted column. Used to score
    pseudo-labels whose novel rows carry no inherent class identity.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(ground_truth, dtype=np.int64)
    novel_mask = truth >= known
    if not novel_mask.any():
        return {}
    total = max(int(truth.max()), int(pred.max())) + 1
    counts = confusion_matrix(truth[novel_mask] - known, pred[novel_mask],
                              total - known, total)
    assignment, _ = hungarian(counts.astype(np.float64))
    mapping = {}
    for novel_class, col in enumerate(assignment[: total - known]):
        mapping[int(col)] = known + novel_class
    return mapping


def nmi(a, b) -> float:
    """Normalized mutual information with arithmetic-mean normalization.

    Invariant under relabeling of either argument. When both labelings
    collapse to a single cluster the partitions agree trivially and the
    value is defined as 1.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidArgumentError("nmi needs two equal-length label vectors")
    if a.size == 0:
        raise InvalidArgumentError("nmi of empty labelings is undefined")

    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    n = a.size
    contingency = confusion_matrix(ai, bi, ai.max() + 1, bi.max() + 1).astype(np.float64)

    pa = contingency.sum(axis=1) / n
    pb = contingency.sum(axis=0) / n
    ha = float(-(pa[pa > 0] * np.log(pa[pa > 0])).sum())
    hb = float(-(pb[pb > 0] * np.log(pb[pb > 0])).sum())
    if ha == 0.0 and hb == 0.0:
        return 1.0

    pij = contingency / n
    outer = pa[:, None] * pb[None, :]
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    denom = 0.5 * (ha + hb)
    if denom == 0.0:
        return 0.0
    return float(np.clip(mi / denom, 0.0, 1.0))


def write_eval_csv(path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("seen_acc,novel_acc,all_acc,novel_nmi\n")
        fh.write(report.csv_row() + "\n")

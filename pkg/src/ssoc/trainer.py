"""Training loop: batch sampling, two-view augmentation, forward/backward, updates.

One step concatenates the labeled batch with both augmented unlabeled
views, runs cross-attention to get the per-batch center increments,
scores every row against those increments, takes pseudo-labels from the
second view, and applies the loss suite to the labeled plus first-view
rows. Gradients flow through the scoring and attention maps into the
three layer matrices only; the centers advance by the residual rule as a
detached state.

Ground-truth labels for unlabeled data are never touched here. Callers
that want per-epoch pseudo-label audits (the sweep command does) receive
raw selections through ``epoch_hook`` and judge them outside the loop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attention import (
    AttentionParams,
    ClassCenters,
    NORM_MODES,
    cross_attention_backward,
    cross_attention_forward,
    init_attention_params,
    save_model_checkpoint,
    load_model_checkpoint,
    update_centers,
)
from .classifier import BatchProbabilities, predict_probs, probs_backward
from .dataio import EmbeddingDataset
from .errors import InvalidArgumentError, NumericalError
from .init import InitMode, init_class_centers
from .losses import (
    ENTROPY_MODES,
    LossBreakdown,
    LossWeights,
    entropy_reg,
    pairwise_bce,
    pseudo_ce,
    supervised_ce,
    total_loss,
)
from .optim import (
    AdamState,
    Schedule,
    TrainerCheckpointExtra,
    adam_step,
    cosine_lr,
    early_stop_check,
    load_optimizer_state,
    save_optimizer_state,
)

log = logging.getLogger(__name__)

METRICS_HEADER = "epoch,total,ce_l,ce_u,bce,re,lr,selected_pseudo,pseudo_acc"

_BOOL_KEYS = ("bce_z_grad", "early_stopping")
_OPTIONAL_FLOAT_KEYS = ("augment_sigma", "grad_clip")
_OPTIONAL_INT_KEYS = ("batch_labeled", "batch_unlabeled", "novel_classes")
_STR_KEYS = ("init_kind", "norm_mode", "entropy_mode", "attn_init", "lr_schedule")


@dataclass
class TrainConfig:
    """Every training hyperparameter, flat so config files map one key per field."""

    epochs: int = 200
    batch_size: int = 128
    batch_labeled: int | None = None  # None: split batch_size proportionally
    batch_unlabeled: int | None = None
    lr_attention: float = 5e-3
    lr_backbone: float = 1e-4  # reserved for a trainable-backbone group
    epsilon: float = 2.0  # labeled-row softmax temperature
    alpha: float = 1.0
    beta: float = 0.5
    gamma: float = 1.0
    delta: float = 1.0
    tau1: float = 0.6
    tau2: float = 0.8
    prob_floor: float = 1e-9
    init_kind: str = "cluster_all"
    lloyd_max_iter: int = 100
    lloyd_tol: float = 1e-6
    norm_mode: str = "none"
    augment_sigma: float | None = None  # None: 0.1 x mean unlabeled embedding norm
    seed: int = 0
    entropy_mode: str = "per_sample"
    attn_init: str = "calibrated"
    attn_attention_logit: float = 8.0  # target initial attention logit scale
    attn_value_logit: float = 8.0  # target initial classification logit scale
    bce_z_grad: bool = False
    grad_clip: float | None = None
    lr_schedule: str = "cosine"
    early_stopping: bool = True
    patience: int = 20
    min_delta: float = 0.0
    holdout_fraction: float = 0.1
    novel_classes: int | None = None  # dataset-level hint consumed by the CLI

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(
            alpha=self.alpha,
            beta=self.beta,
            gamma=self.gamma,
            delta=self.delta,
            tau1=self.tau1,
            tau2=self.tau2,
            prob_floor=self.prob_floor,
        )

    def init_mode(self) -> InitMode:
        return InitMode(
            kind=self.init_kind,
            seed=self.seed,
            lloyd_max_iter=self.lloyd_max_iter,
            lloyd_tol=self.lloyd_tol,
        )

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise InvalidArgumentError("epochs must be >= 0")
        if self.batch_size < 2:
            raise InvalidArgumentError("batch_size must be >= 2")
        for name in ("batch_labeled", "batch_unlabeled"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise InvalidArgumentError(f"{name} must be positive when given")
        if not (self.lr_attention > 0 and self.lr_backbone > 0):
            raise InvalidArgumentError("learning rates must be positive")
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be positive")
        if self.augment_sigma is not None and self.augment_sigma < 0:
            raise InvalidArgumentError("augment_sigma must be nonnegative")
        if self.norm_mode not in NORM_MODES:
            raise InvalidArgumentError(f"norm_mode must be one of {NORM_MODES}")
        if self.entropy_mode not in ENTROPY_MODES:
            raise InvalidArgumentError(f"entropy_mode must be one of {ENTROPY_MODES}")
        if not (0.0 <= self.holdout_fraction < 1.0):
            raise InvalidArgumentError("holdout_fraction must lie in [0, 1)")
        if self.patience < 1:
            raise InvalidArgumentError("patience must be >= 1")
        if self.attn_init not in ("calibrated", "identity", "gaussian"):
            raise InvalidArgumentError("attn_init must be calibrated, identity, or gaussian")
        if not (self.attn_attention_logit > 0 and self.attn_value_logit > 0):
            raise InvalidArgumentError("attention init logit targets must be positive")
        self.loss_weights.validate()
        self.init_mode().validate()
        Schedule(self.lr_attention, max(self.epochs, 1), self.lr_schedule).validate()
        return self

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return apply_overrides(cls(), parse_config_text(Path(path).read_text(encoding="utf-8")))


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise InvalidArgumentError(f"config line {lineno}: empty key or value")
        out[key] = value
    return out


def apply_overrides(config: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    valid = {f for f in config.__dataclass_fields__}
    parsed = {}
    for key, value in overrides.items():
        if key not in valid:
            raise InvalidArgumentError(f"unknown config key {key!r}")
        parsed[key] = _parse_value(key, value)
    return replace(config, **parsed)


def _parse_value(key: str, value):
    if not isinstance(value, str):
        return value
    lowered = value.lower()
    if key in _BOOL_KEYS:
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise InvalidArgumentError(f"config key {key!r}: expected a boolean, got {value!r}")
    if key in _OPTIONAL_FLOAT_KEYS and lowered in ("auto", "none"):
        return None
    if key in _OPTIONAL_INT_KEYS and lowered in ("auto", "none"):
        return None
    if key in _STR_KEYS:
        return value
    try:
        if key in ("epochs", "batch_size", "seed", "lloyd_max_iter", "patience") or key in _OPTIONAL_INT_KEYS:
            return int(value)
        return float(value)
    except ValueError as exc:
        raise InvalidArgumentError(f"config key {key!r}: cannot parse {value!r}") from exc


@dataclass
class TrainState:
    centers: ClassCenters
    params: AttentionParams
    adam: AdamState


@dataclass
class EpochReport:
    epoch: int
    breakdown: LossBreakdown
    selected_pseudo: int
    pseudo_acc: float  # nan during training; filled by offline audits only
    lr_attention: float
    lr_backbone: float


@dataclass
class TrainResult:
    centers: ClassCenters
    params: AttentionParams
    reports: list[EpochReport] = field(default_factory=list)
    stopped_early: bool = False
    best_metric: float = -math.inf


def augment_views(z, sigma: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two Gaussian-perturbed views of one embedding vector.

    With sigma 0 both views equal the input. Deterministic given
    (z, sigma, seed).
    """
    if sigma < 0:
        raise InvalidArgumentError("sigma must be nonnegative")
    z = np.asarray(z, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)
    r1 = z + sigma * rng.normal(size=z.shape)
    r2 = z + sigma * rng.normal(size=z.shape)
    return r1, r2


def _augment_batch(z: np.ndarray, sigma: float, rng: np.random.Generator):
    if sigma == 0.0:
        return z.copy(), z.copy()
    return z + sigma * rng.normal(size=z.shape), z + sigma * rng.normal(size=z.shape)


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy))


def batch_forward(
    z_l: np.ndarray,
    y_l: np.ndarray,
    z_u1: np.ndarray,
    z_u2: np.ndarray,
    centers: ClassCenters,
    params: AttentionParams,
    config: TrainConfig,
    compute_grads: bool = True,
):
    """Forward (and optionally backward) pass for one assembled batch.

    Returns ``(breakdown, grads, delta, audit)`` where grads maps w_q/w_k/w_v
    to loss gradients (None when ``compute_grads`` is off), delta is the
    attention increment for the residual center update, and audit carries
    the second view's pseudo-labels, confidences, and gate mask.
    """
    n_l, n_u = z_l.shape[0], z_u1.shape[0]
    weights = config.loss_weights
    z_cat = np.vstack([z_l, z_u1, z_u2])
    is_labeled = np.zeros(z_cat.shape[0], dtype=bool)
    is_labeled[:n_l] = True

    delta, cache = cross_attention_forward(centers, z_cat, params)
    bp = predict_probs(z_cat, delta, is_labeled, config.epsilon)
    p_l = bp.probs[:n_l]
    p_u1 = bp.probs[n_l : n_l + n_u]
    pseudo2 = bp.pseudo_labels[n_l + n_u :]
    conf2 = bp.confidences[n_l + n_u :]

    scored_z = z_cat[: n_l + n_u]
    scored_labels = np.concatenate([y_l, np.full(n_u, -1, dtype=np.int64)])
    scored_conf = bp.confidences[: n_l + n_u]
    scored_p = bp.probs[: n_l + n_u]

    ce_l = supervised_ce(p_l, y_l, weights.prob_floor)
    ce_u = pseudo_ce(p_u1, pseudo2, conf2, weights.tau1, weights.prob_floor)
    bce = pairwise_bce(
        scored_p, scored_z, scored_labels, scored_conf, weights.tau2,
        weights.prob_floor, z_grad=config.bce_z_grad,
    )
    reg = entropy_reg(scored_p, weights.prob_floor, config.entropy_mode)
    breakdown, d_p_scored, _ = total_loss(ce_l, ce_u, bce, reg, weights, n_l)

    if not np.isfinite(breakdown.total):
        raise NumericalError("total loss is not finite")

    audit = (pseudo2, conf2, conf2 > weights.tau1)
    if not compute_grads:
        return breakdown, None, delta, audit

    d_probs = np.zeros_like(bp.probs)
    d_probs[: n_l + n_u] = d_p_scored
    _, d_delta = probs_backward(bp, d_probs, z_cat, delta, config.epsilon, is_labeled)
    d_wq, d_wk, d_wv, _ = cross_attention_backward(cache, d_delta)
    grads = {"w_q": d_wq, "w_k": d_wk, "w_v": d_wv}
    return breakdown, grads, delta, audit


def train_step(
    batch_labeled: tuple[np.ndarray, np.ndarray],
    batch_unlabeled: tuple[np.ndarray, np.ndarray],
    state: TrainState,
    config: TrainConfig,
    lr_attention: float,
) -> tuple[TrainState, LossBreakdown, tuple]:
    """One optimization step: losses, residual center update, then Adam.

    The center update precedes the optimizer step; both consume
    quantities computed from the pre-update snapshot, so the two updates
    are independent of each other.
    """
    z_l, y_l = batch_labeled
    z_u1, z_u2 = batch_unlabeled
    breakdown, grads, delta, audit = batch_forward(
        z_l, y_l, z_u1, z_u2, state.centers, state.params, config
    )

    if config.grad_clip is not None:
        total_sq = sum(float((g * g).sum()) for g in grads.values())
        norm = math.sqrt(total_sq)
        if norm > config.grad_clip:
            scale = config.grad_clip / norm
            grads = {k: g * scale for k, g in grads.items()}

    new_centers = update_centers(state.centers, delta, config.norm_mode)
    params_dict = {"w_q": state.params.w_q, "w_k": state.params.w_k, "w_v": state.params.w_v}
    updated = adam_step(params_dict, grads, state.adam, lr_attention)
    new_params = AttentionParams(updated["w_q"], updated["w_k"], updated["w_v"])
    return TrainState(new_centers, new_params, state.adam), breakdown, audit


class _IndexStream:
    """Deterministic shuffled index cycle; reshuffles whenever exhausted."""

    def __init__(self, count: int, rng: np.random.Generator):
        self.count = count
        self.rng = rng
        self.order = rng.permutation(count)
        self.pos = 0

    def take(self, n: int) -> np.ndarray:
        out = []
        while n > 0:
            if self.pos >= self.count:
                self.order = self.rng.permutation(self.count)
                self.pos = 0
            grab = min(n, self.count - self.pos)
            out.append(self.order[self.pos : self.pos + grab])
            self.pos += grab
            n -= grab
        return np.concatenate(out)


def resolve_batch_sizes(config: TrainConfig, n_labeled: int, n_unlabeled: int) -> tuple[int, int]:
    """Per-batch labeled/unlabeled sizes; defaults split batch_size proportionally."""
    total = n_labeled + n_unlabeled
    if config.batch_labeled is not None:
        b_l = min(config.batch_labeled, n_labeled)
    else:
        b_l = int(round(config.batch_size * n_labeled / total))
        b_l = max(1, min(b_l, config.batch_size - 1, n_labeled))
    if config.batch_unlabeled is not None:
        b_u = min(config.batch_unlabeled, n_unlabeled)
    else:
        b_u = max(1, min(config.batch_size - b_l, n_unlabeled))
    return b_l, b_u


def holdout_split(
    n_labeled: int, fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/holdout row split over the labeled set."""
    rng = _rng(seed, 101)
    perm = rng.permutation(n_labeled)
    n_hold = int(round(fraction * n_labeled))
    if n_hold == 0 or n_hold >= n_labeled:
        return np.arange(n_labeled), np.empty(0, dtype=np.int64)
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def train(
    dataset: EmbeddingDataset,
    config: TrainConfig,
    out_dir=None,
    resume=None,
    epoch_hook=None,
) -> TrainResult:
    """Run the full training loop.

    Writes ``metrics.csv`` plus ``last``/``best`` checkpoints under
    ``out_dir`` when given. ``epoch_hook(epoch, rows, pseudo, selected)``
    receives this epoch's unlabeled row indices, their view-2
    pseudo-labels, and the confidence-gate mask; the trainer itself never
    judges them against ground truth.
    """
    config.validate()
    dataset.validate()
    if dataset.labeled_count < 1 or dataset.unlabeled_count < 1:
        raise InvalidArgumentError("training needs at least one labeled and one unlabeled row")
    if dataset.class_count < 2:
        raise InvalidArgumentError("training needs at least two open-world classes")

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    # early-stop holdout; disabled when the labeled set is too small to carve
    hold_fraction = config.holdout_fraction if config.early_stopping else 0.0
    train_rows, hold_rows = holdout_split(dataset.labeled_count, hold_fraction, config.seed)
    z_l_all = dataset.labeled_z[train_rows]
    y_l_all = dataset.labeled_y[train_rows]
    z_hold = dataset.labeled_z[hold_rows]
    y_hold = dataset.labeled_y[hold_rows]
    can_early_stop = config.early_stopping and hold_rows.size > 0

    sigma = config.augment_sigma
    if sigma is None:
        sigma = 0.1 * float(np.linalg.norm(dataset.unlabeled_z1, axis=1).mean())

    if resume is not None:
        params, centers, known, novel = load_model_checkpoint(Path(resume))
        if (known, novel) != (dataset.known_class_count, dataset.novel_class_count):
            raise InvalidArgumentError(
                "checkpoint class counts do not match the dataset"
            )
        adam, extra = load_optimizer_state(Path(resume).with_suffix(".opt"))
        centers.step = extra.center_step
        start_epoch = extra.next_epoch
    else:
        centers = init_class_centers(dataset, config.init_mode())
        s_qk, s_v = _calibration_scales(dataset, config)
        params = init_attention_params(
            dataset.dim, config.seed, config.attn_init,
            query_key_scale=s_qk, value_scale=s_v,
        )
        adam = AdamState.for_params(
            {"w_q": params.w_q, "w_k": params.w_k, "w_v": params.w_v},
            beta1=0.9, beta2=0.99,
        )
        extra = TrainerCheckpointExtra()
        start_epoch = 0

    state = TrainState(centers, params, adam)
    result = TrainResult(centers=state.centers, params=state.params)
    result.best_metric = extra.best_metric
    if config.epochs == 0:
        return result

    b_l, b_u = resolve_batch_sizes(config, z_l_all.shape[0], dataset.unlabeled_count)
    n_batches = max(
        math.ceil(z_l_all.shape[0] / b_l), math.ceil(dataset.unlabeled_count / b_u)
    )
    schedule = Schedule(config.lr_attention, config.epochs, config.lr_schedule)
    schedule_backbone = Schedule(config.lr_backbone, config.epochs, config.lr_schedule)

    metrics_path = out_dir / "metrics.csv" if out_dir is not None else None
    metrics_fh = None
    if metrics_path is not None:
        metrics_fh = open(metrics_path, "w", encoding="utf-8")
        metrics_fh.write(METRICS_HEADER + "\n")

    history = list(extra.history)
    best_metric = extra.best_metric
    since_improve = extra.epochs_since_improve
    stopped = False

    try:
        for epoch in range(start_epoch, config.epochs):
            lr_att = cosine_lr(epoch, schedule)
            lr_back = cosine_lr(epoch, schedule_backbone)
            lab_stream = _IndexStream(z_l_all.shape[0], _rng(config.seed, epoch, 11))
            unl_stream = _IndexStream(dataset.unlabeled_count, _rng(config.seed, epoch, 12))

            sums = np.zeros(5)
            sel_pseudo = 0
            sel_pairs = 0
            hook_rows, hook_pseudo, hook_sel = [], [], []

            for b in range(n_batches):
                li = lab_stream.take(b_l)
                ui = unl_stream.take(b_u)
                if dataset.unlabeled_z2 is not None:
                    r1, r2 = dataset.unlabeled_z1[ui], dataset.unlabeled_z2[ui]
                else:
                    r1, r2 = _augment_batch(
                        dataset.unlabeled_z1[ui], sigma, _rng(config.seed, epoch, b, 13)
                    )
                try:
                    state, breakdown, audit = train_step(
                        (z_l_all[li], y_l_all[li]), (r1, r2), state, config, lr_att
                    )
                except NumericalError as exc:
                    raise NumericalError(f"epoch {epoch} batch {b}: {exc}") from exc
                sums += (
                    breakdown.total,
                    breakdown.ce_labeled,
                    breakdown.ce_pseudo,
                    breakdown.bce_pair,
                    breakdown.entropy_reg,
                )
                sel_pseudo += breakdown.selected_pseudo_count
                sel_pairs += breakdown.selected_pair_count
                pseudo2, _, selected = audit
                hook_rows.append(ui)
                hook_pseudo.append(pseudo2)
                hook_sel.append(selected)

            means = sums / n_batches
            breakdown_mean = LossBreakdown(
                total=means[0], ce_labeled=means[1], ce_pseudo=means[2],
                bce_pair=means[3], entropy_reg=means[4],
                selected_pseudo_count=sel_pseudo, selected_pair_count=sel_pairs,
            )
            report = EpochReport(
                epoch=epoch, breakdown=breakdown_mean, selected_pseudo=sel_pseudo,
                pseudo_acc=float("nan"), lr_attention=lr_att, lr_backbone=lr_back,
            )
            result.reports.append(report)
            if metrics_fh is not None:
                metrics_fh.write(
                    ",".join(
                        [
                            str(epoch),
                            _fmt(means[0]), _fmt(means[1]), _fmt(means[2]),
                            _fmt(means[3]), _fmt(means[4]), _fmt(lr_att),
                            str(sel_pseudo), "nan",
                        ]
                    )
                    + "\n"
                )
                metrics_fh.flush()
            if epoch_hook is not None:
                epoch_hook(
                    epoch,
                    np.concatenate(hook_rows),
                    np.concatenate(hook_pseudo),
                    np.concatenate(hook_sel),
                )

            # validation metric: negated supervised CE on the labeled holdout
            improved = False
            if can_early_stop:
                metric = -_holdout_ce(z_hold, y_hold, state.centers, config.prob_floor)
                history.append(metric)
                if metric - best_metric >= config.min_delta or best_metric == -math.inf:
                    best_metric = max(best_metric, metric)
                    since_improve = 0
                    improved = True
                else:
                    since_improve += 1

            if out_dir is not None:
                _save_all(
                    out_dir / "last.ckpt", state, dataset,
                    TrainerCheckpointExtra(
                        next_epoch=epoch + 1, center_step=state.centers.step,
                        best_metric=best_metric, epochs_since_improve=since_improve,
                        history=history,
                    ),
                )
                if improved or (not can_early_stop and epoch == config.epochs - 1):
                    _save_all(
                        out_dir / "best.ckpt", state, dataset,
                        TrainerCheckpointExtra(
                            next_epoch=epoch + 1, center_step=state.centers.step,
                            best_metric=best_metric, epochs_since_improve=since_improve,
                            history=history,
                        ),
                    )

            if can_early_stop and early_stop_check(history, config.patience, config.min_delta):
                log.info("early stop after epoch %d (no improvement for %d epochs)",
                         epoch, config.patience)
                stopped = True
                break
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    result.centers = state.centers
    result.params = state.params
    result.stopped_early = stopped
    result.best_metric = best_metric
    return result


def _calibration_scales(dataset: EmbeddingDataset, config: TrainConfig) -> tuple[float, float]:
    """Diagonal init scales putting attention and classification logits on target.

    Attention logits scale like s_qk^2 * E||z||^2 / sqrt(d) and
    classification logits like s_v * E||z||^2, so the targets pin both.
    """
    pool = np.vstack([dataset.labeled_z, dataset.unlabeled_z1])
    mean_sq = float((pool * pool).sum(axis=1).mean())
    if mean_sq <= 0:
        raise InvalidArgumentError("embeddings are identically zero; cannot calibrate")
    s_qk = math.sqrt(config.attn_attention_logit * math.sqrt(dataset.dim) / mean_sq)
    s_v = config.attn_value_logit / mean_sq
    return s_qk, s_v


def _holdout_ce(z_hold, y_hold, centers: ClassCenters, prob_floor: float) -> float:
    bp = predict_probs(z_hold, centers, np.zeros(z_hold.shape[0], dtype=bool), 1.0)
    value, _ = supervised_ce(bp.probs, y_hold, prob_floor)
    return value


def _save_all(model_path: Path, state: TrainState, dataset: EmbeddingDataset,
              extra: TrainerCheckpointExtra) -> None:
    save_model_checkpoint(
        model_path, state.params, state.centers,
        dataset.known_class_count, dataset.novel_class_count,
    )
    save_optimizer_state(model_path.with_suffix(".opt"), state.adam, extra)


def replay_pseudo_selection(
    dataset: EmbeddingDataset,
    params: AttentionParams,
    centers: ClassCenters,
    config: TrainConfig,
    tau_values,
    epoch: int = 0,
) -> dict[float, dict]:
    """Pseudo-label selection statistics on a frozen model snapshot.

    Replays one epoch's deterministic batch stream without updating
    anything, collects view-2 confidences and pseudo-labels, then reports
    per-threshold selected counts (and, when the dataset carries ground
    truth, the accuracy of selected pseudo-labels on novel-class rows).
    """
    config.validate()
    train_rows, _ = holdout_split(
        dataset.labeled_count,
        config.holdout_fraction if config.early_stopping else 0.0,
        config.seed,
    )
    z_l_all = dataset.labeled_z[train_rows]
    y_l_all = dataset.labeled_y[train_rows]
    sigma = config.augment_sigma
    if sigma is None:
        sigma = 0.1 * float(np.linalg.norm(dataset.unlabeled_z1, axis=1).mean())
    b_l, b_u = resolve_batch_sizes(config, z_l_all.shape[0], dataset.unlabeled_count)
    n_batches = max(math.ceil(z_l_all.shape[0] / b_l), math.ceil(dataset.unlabeled_count / b_u))
    lab_stream = _IndexStream(z_l_all.shape[0], _rng(config.seed, epoch, 11))
    unl_stream = _IndexStream(dataset.unlabeled_count, _rng(config.seed, epoch, 12))

    rows_all, conf_all, pseudo_all = [], [], []
    for b in range(n_batches):
        li = lab_stream.take(b_l)
        ui = unl_stream.take(b_u)
        if dataset.unlabeled_z2 is not None:
            r1, r2 = dataset.unlabeled_z1[ui], dataset.unlabeled_z2[ui]
        else:
            r1, r2 = _augment_batch(dataset.unlabeled_z1[ui], sigma, _rng(config.seed, epoch, b, 13))
        _, _, _, audit = batch_forward(
            z_l_all[li], y_l_all[li], r1, r2,
            centers, params, config, compute_grads=False,
        )
        pseudo2, conf2, _ = audit
        rows_all.append(ui)
        conf_all.append(conf2)
        pseudo_all.append(pseudo2)

    rows = np.concatenate(rows_all)
    conf = np.concatenate(conf_all)
    pseudo = np.concatenate(pseudo_all)

    out = {}
    truth = None
    if dataset.ground_truth is not None:
        truth = dataset.ground_truth[rows]
        # novel rows carry no inherent identity; align columns once per snapshot
        mapped = align_novel_pseudo_labels(pseudo, truth, dataset.known_class_count)
    for tau in tau_values:
        selected = conf > tau
        entry = {"selected": int(selected.sum())}
        if truth is not None:
            novel_sel = selected & (truth >= dataset.known_class_count)
            entry["novel_selected"] = int(novel_sel.sum())
            entry["novel_accuracy"] = (
                float((mapped[novel_sel] == truth[novel_sel]).mean())
                if novel_sel.any()
                else float("nan")
            )
        out[float(tau)] = entry
    return out


def align_novel_pseudo_labels(pseudo_labels, truth, known: int) -> np.ndarray:
    """Relabel pseudo-label columns by their best novel-class match.

    Known columns keep their identity; novel columns map through the
    maximum-weight assignment against the ground truth, and columns
    claimed by no novel class map to -1 (never correct).
    """
    from .eval import novel_column_mapping

    pseudo_labels = np.asarray(pseudo_labels, dtype=np.int64)
    mapping = novel_column_mapping(pseudo_labels, truth, known)
    mapped = np.full_like(pseudo_labels, -1)
    known_cols = pseudo_labels < known
    mapped[known_cols] = pseudo_labels[known_cols]
    for col, cls in mapping.items():
        mapped[pseudo_labels == col] = cls
    return mapped

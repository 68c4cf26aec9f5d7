"""Adam with bias correction, cosine-annealed learning rates, early stopping."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError, NumericalError, ShapeError

OPT_MAGIC = b"SSOCOPT1"

SCHEDULE_MODES = ("constant", "cosine")


@dataclass
class AdamState:
    """First/second moments per named parameter block plus the step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps_hat: float = 1e-8

    @classmethod
    def for_params(
        cls, params: dict[str, np.ndarray], beta1: float = 0.9, beta2: float = 0.99,
        eps_hat: float = 1e-8,
    ) -> "AdamState":
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise InvalidArgumentError("betas must lie in [0, 1)")
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            beta1=beta1,
            beta2=beta2,
            eps_hat=eps_hat,
        )


@dataclass(frozen=True)
class Schedule:
    base_lr: float
    total_epochs: int
    mode: str = "cosine"

    def validate(self) -> "Schedule":
        if not self.base_lr > 0:
            raise InvalidArgumentError(f"base_lr must be positive, got {self.base_lr}")
        if self.mode not in SCHEDULE_MODES:
            raise InvalidArgumentError(f"schedule mode must be one of {SCHEDULE_MODES}")
        return self


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float
) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new parameters, mutates the state.

    Update rule per entry: p -= lr * m_hat / sqrt(v_hat + eps_hat).
    """
    if not lr > 0:
        raise InvalidArgumentError(f"lr must be positive, got {lr}")
    if set(params) != set(state.m):
        raise ShapeError("parameter blocks do not match optimizer state blocks")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape mismatch for block {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"NaN/Inf gradient in parameter block {name!r}")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out = {}
    for name, p in params.items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        out[name] = p - lr * m_hat / np.sqrt(v_hat + state.eps_hat)
    return out


def cosine_lr(epoch: int, schedule: Schedule) -> float:
    """Half-cosine decay from base_lr toward zero across the configured epochs."""
    schedule.validate()
    if not (0 <= epoch < schedule.total_epochs):
        raise InvalidArgumentError(
            f"epoch {epoch} outside [0, {schedule.total_epochs})"
        )
    if schedule.mode == "constant":
        return schedule.base_lr
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / schedule.total_epochs))


def early_stop_check(history, patience: int, min_delta: float = 0.0) -> bool:
    """True when the (higher-is-better) metric stalled for ``patience`` epochs.

    A value counts as an improvement when it beats the best seen so far by
    at least ``min_delta``.
    """
    history = list(history)
    if not history:
        raise InvalidArgumentError("history must be nonempty")
    if patience < 1:
        raise InvalidArgumentError("patience must be >= 1")
    best = -math.inf
    since = 0
    for value in history:
        if value - best >= min_delta or best == -math.inf:
            best = max(best, value)
            since = 0
        else:
            since += 1
    return since >= patience


@dataclass
class TrainerCheckpointExtra:
    """Loop bookkeeping stored next to the Adam moments for exact resume."""

    next_epoch: int = 0
    center_step: int = 0
    best_metric: float = -math.inf
    epochs_since_improve: int = 0
    history: list[float] = field(default_factory=list)


def save_optimizer_state(path, state: AdamState, extra: TrainerCheckpointExtra) -> None:
    names = sorted(state.m)
    with open(path, "wb") as fh:
        fh.write(OPT_MAGIC)
        fh.write(struct.pack("<Qddd", state.step_count, state.beta1,
                             state.beta2, state.eps_hat))
        fh.write(struct.pack("<IQdI", extra.next_epoch, extra.center_step,
                             extra.best_metric, extra.epochs_since_improve))
        fh.write(struct.pack("<I", len(extra.history)))
        if extra.history:
            fh.write(np.asarray(extra.history, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode()
            block_m, block_v = state.m[name], state.v[name]
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", *block_m.shape))
            fh.write(block_m.astype("<f8").tobytes(order="C"))
            fh.write(block_v.astype("<f8").tobytes(order="C"))


def load_optimizer_state(path) -> tuple[AdamState, TrainerCheckpointExtra]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != OPT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {OPT_MAGIC!r}")
        step_count, beta1, beta2, eps_hat = struct.unpack("<Qddd", fh.read(32))
        next_epoch, center_step, best_metric, since = struct.unpack("<IQdI", fh.read(24))
        (hist_len,) = struct.unpack("<I", fh.read(4))
        history = list(np.frombuffer(fh.read(hist_len * 8), dtype="<f8"))
        if len(history) != hist_len:
            raise FormatError(f"{path}: truncated history block")
        (n_blocks,) = struct.unpack("<I", fh.read(4))
        m, v = {}, {}
        for _ in range(n_blocks):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode()
            rows, cols = struct.unpack("<II", fh.read(8))
            want = rows * cols
            raw_m = np.frombuffer(fh.read(want * 8), dtype="<f8")
            raw_v = np.frombuffer(fh.read(want * 8), dtype="<f8")
            if raw_m.shape[0] != want or raw_v.shape[0] != want:
                raise FormatError(f"{path}: truncated moment block {name!r}")
            m[name] = raw_m.reshape(rows, cols).copy()
            v[name] = raw_v.reshape(rows, cols).copy()
    state = AdamState(m=m, v=v, step_count=step_count, beta1=beta1, beta2=beta2, eps_hat=eps_hat)
    extra = TrainerCheckpointExtra(
        next_epoch=next_epoch,
        center_step=center_step,
        best_metric=best_metric,
        epochs_since_improve=since,
        history=history,
    )
    return state, extra

"""Finite-difference validation of the analytic backward chain.

Builds small random training batches, computes the total loss gradient
with respect to the three attention matrices both analytically and by
central differences, and reports the worst blockwise relative error.

Instances are rerolled (deterministically) until every confidence gate
and every argmax-derived pseudo-label sits a safe margin away from its
decision boundary, so the finite-difference probe never crosses a
discontinuity of the gated objective.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionParams, ClassCenters, cross_attention_forward
from .classifier import predict_probs
from .trainer import TrainConfig, batch_forward

GATE_MARGIN = 1e-3
ARGMAX_MARGIN = 1e-3


@dataclass
class GradCheckInstance:
    z_l: np.ndarray
    y_l: np.ndarray
    z_u1: np.ndarray
    z_u2: np.ndarray
    centers: ClassCenters
    params: AttentionParams
    config: TrainConfig


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_instance: list[float] = field(default_factory=list)
    elapsed_seconds: float = 0.0

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_rel_error < tol


def make_instance(seed: int, max_rolls: int = 64) -> GradCheckInstance:
    """A random margin-safe batch with d <= 8, total rows <= 16, classes <= 6."""
    for roll in range(max_rolls):
        rng = np.random.default_rng(np.random.SeedSequence((seed, roll)))
        d = int(rng.integers(3, 9))
        n_l = int(rng.integers(2, 6))
        n_u = int(rng.integers(2, 6))
        m = int(rng.integers(2, 7))
        s = int(rng.integers(1, m)) if m > 1 else 1

        inst = GradCheckInstance(
            z_l=rng.normal(scale=0.6, size=(n_l, d)),
            y_l=rng.integers(0, s, size=n_l).astype(np.int64),
            z_u1=rng.normal(scale=0.6, size=(n_u, d)),
            z_u2=rng.normal(scale=0.6, size=(n_u, d)),
            centers=ClassCenters(rng.normal(scale=0.6, size=(m, d))),
            params=AttentionParams(
                rng.normal(scale=0.4, size=(d, d)),
                rng.normal(scale=0.4, size=(d, d)),
                rng.normal(scale=0.4, size=(d, d)),
            ),
            config=TrainConfig(
                epsilon=2.0,
                alpha=1.0,
                beta=0.5,
                gamma=1.0,
                delta=1.0,
                tau1=float(rng.choice([0.0, 0.25])),
                tau2=float(rng.choice([0.0, 0.25])),
                prob_floor=1e-9,
            ),
        )
        if _margins_ok(inst):
            return inst
    raise RuntimeError(f"could not build a margin-safe instance from seed {seed}")


def _margins_ok(inst: GradCheckInstance) -> bool:
    z_cat = np.vstack([inst.z_l, inst.z_u1, inst.z_u2])
    is_labeled = np.zeros(z_cat.shape[0], dtype=bool)
    is_labeled[: inst.z_l.shape[0]] = True
    delta, _ = cross_attention_forward(inst.centers, z_cat, inst.params)
    bp = predict_probs(z_cat, delta, is_labeled, inst.config.epsilon)

    conf = bp.confidences
    if np.any(np.abs(conf - inst.config.tau1) < GATE_MARGIN):
        return False
    if np.any(np.abs(conf - inst.config.tau2) < GATE_MARGIN):
        return False
    ordered = np.sort(bp.probs, axis=1)
    if np.any(ordered[:, -1] - ordered[:, -2] < ARGMAX_MARGIN):
        return False
    # keep posterior inner products away from the log clamp
    n_scored = inst.z_l.shape[0] + inst.z_u1.shape[0]
    p = bp.probs[:n_scored]
    q = p @ p.T
    floor = inst.config.prob_floor
    return bool(np.all(q > 10 * floor) and np.all(q < 1.0 - 10 * floor))


def total_for_params(inst: GradCheckInstance, params: AttentionParams) -> float:
    breakdown, _, _, _ = batch_forward(
        inst.z_l, inst.y_l, inst.z_u1, inst.z_u2,
        inst.centers, params, inst.config, compute_grads=False,
    )
    return breakdown.total


def analytic_gradients(inst: GradCheckInstance) -> dict[str, np.ndarray]:
    _, grads, _, _ = batch_forward(
        inst.z_l, inst.y_l, inst.z_u1, inst.z_u2,
        inst.centers, inst.params, inst.config,
    )
    return grads


def fd_gradients(inst: GradCheckInstance, step: float = 1e-5) -> dict[str, np.ndarray]:
    out = {}
    base = inst.params
    mats = {"w_q": base.w_q, "w_k": base.w_k, "w_v": base.w_v}
    for name, mat in mats.items():
        grad = np.zeros_like(mat)
        for idx in np.ndindex(mat.shape):
            bumped = {k: (m.copy() if k == name else m) for k, m in mats.items()}
            bumped[name][idx] = mat[idx] + step
            plus = total_for_params(inst, AttentionParams(**bumped))
            bumped[name][idx] = mat[idx] - step
            minus = total_for_params(inst, AttentionParams(**bumped))
            grad[idx] = (plus - minus) / (2.0 * step)
        out[name] = grad
    return out


def instance_rel_error(inst: GradCheckInstance, step: float = 1e-5) -> float:
    analytic = analytic_gradients(inst)
    numeric = fd_gradients(inst, step)
    worst = 0.0
    for name in ("w_q", "w_k", "w_v"):
        ref = np.abs(numeric[name]).max()
        err = np.abs(analytic[name] - numeric[name]).max()
        worst = max(worst, err / max(ref, 1e-10))
    return worst


def run_check(n_instances: int = 20, seed: int = 0, step: float = 1e-5) -> GradCheckReport:
    start = time.perf_counter()
    errors = []
    for i in range(n_instances):
        inst = make_instance(seed + i)
        errors.append(instance_rel_error(inst, step))
    return GradCheckReport(
        max_rel_error=max(errors),
        per_instance=errors,
        elapsed_seconds=time.perf_counter() - start,
    )

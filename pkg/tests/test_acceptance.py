"""Acceptance suite: one test per release criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the criterion
lines as they complete. Training runs here are deterministic, seeded,
and sized for a single desktop core.
"""

import itertools
import math
import os
import subprocess
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from ssoc.dataio import MixtureSpec, SplitSpec, generate_mixture, split_open_world
from ssoc.classifier import infer
from ssoc.eval import evaluate, hungarian, nmi
from ssoc.gradcheck import run_check
from ssoc.numerics import pairwise_sq_dists
from ssoc.trainer import TrainConfig, replay_pseudo_selection, train

# Desk-scale run configuration: a gentler attention learning rate than the
# full-scale default and the batch-marginal entropy variant keep the
# small-run dynamics stable; everything else is the stock default.
DESK = dict(lr_attention=3e-4, beta=0.2, entropy_mode="batch_marginal")

# Harder mixture for the loss-ablation comparisons: partially overlapping
# clusters so pseudo-labeling is genuinely noisy and the regularizer has
# collapse pressure to push against.
ABLATION_SEP = 4.0
ABLATION_CFG = dict(lr_attention=1e-3, beta=0.2, entropy_mode="batch_marginal")


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"\n[ACCEPTANCE] {name}: PASS")


def make_problem(seed, novel_ratio=0.5, separation=8.0):
    spec = MixtureSpec(
        class_count=10, dim=32, samples_per_class=200,
        center_separation=separation, within_class_std=1.0, seed=seed,
    )
    points, labels = generate_mixture(spec)
    ds = split_open_world(points, labels, SplitSpec(0.5, novel_ratio, seed=seed))
    return points, labels, ds


def train_and_eval(ds, seed, epochs=100, **overrides):
    cfg_kw = dict(DESK)
    cfg_kw.update(overrides)
    cfg = TrainConfig(epochs=epochs, seed=seed, **cfg_kw)
    result = train(ds, cfg)
    pred = infer(ds.unlabeled_z1, result.centers)
    return evaluate(pred, ds.ground_truth, ds.known_class_count), result, cfg


@pytest.fixture(scope="module")
def e2e_run():
    points, labels, ds = make_problem(seed=0)
    start = time.perf_counter()
    report, result, cfg = train_and_eval(ds, seed=0)
    elapsed = time.perf_counter() - start
    return points, labels, ds, report, result, cfg, elapsed


def test_gradient_integrity():
    with criterion("gradient integrity (20 instances, 1e-5 rel tol)"):
        report = run_check(n_instances=20, seed=0, step=1e-5)
        assert report.max_rel_error < 1e-5, f"max rel error {report.max_rel_error:.3e}"
        assert report.elapsed_seconds < 30.0, f"took {report.elapsed_seconds:.1f}s"


def test_end_to_end_discovery(e2e_run):
    points, labels, ds, report, _, _, elapsed = e2e_run
    with criterion("end-to-end discovery (all_acc >= 0.95, novel NMI >= 0.90)"):
        # oracle first: the task is information-theoretically easy
        true_means = np.vstack([points[labels == c].mean(axis=0) for c in range(10)])
        nn = pairwise_sq_dists(points, true_means).argmin(axis=1)
        oracle_acc = float((nn == labels).mean())
        assert oracle_acc >= 0.999, f"oracle nearest-center accuracy {oracle_acc:.4f}"

        assert report.all_acc >= 0.95, f"all_acc {report.all_acc:.4f}"
        assert report.novel_nmi >= 0.90, f"novel NMI {report.novel_nmi:.4f}"
        assert elapsed < 300.0, f"training took {elapsed:.0f}s"


def test_ablation_entropy_direction():
    with criterion("ablation direction: beta=0 strictly lowers novel NMI"):
        for seed in (0, 1, 2):
            spec = MixtureSpec(10, 32, 200, ABLATION_SEP, 1.0, seed=seed)
            points, labels = generate_mixture(spec)
            ds = split_open_world(points, labels, SplitSpec(0.5, 0.5, seed=seed))
            full, _, _ = train_and_eval(ds, seed, **ABLATION_CFG)
            no_re, _, _ = train_and_eval(ds, seed, **{**ABLATION_CFG, "beta": 0.0})
            assert no_re.novel_nmi < full.novel_nmi, (
                f"seed {seed}: w/o entropy NMI {no_re.novel_nmi:.4f} "
                f">= full {full.novel_nmi:.4f}"
            )


def test_ablation_no_ce_collapse():
    # Known-unattainable at desk scale: with a frozen, class-informative
    # embedding space and additive center updates, every reachable
    # prediction rule keeps more class structure than 2x chance after
    # alignment. Asserted as specified; see the decisions ledger.
    with criterion("ablation direction: gamma=delta=0 collapses below 2x chance"):
        worst = 0.0
        for seed in (0, 1, 2):
            spec = MixtureSpec(10, 32, 200, ABLATION_SEP, 1.0, seed=seed)
            points, labels = generate_mixture(spec)
            ds = split_open_world(points, labels, SplitSpec(0.5, 0.5, seed=seed))
            no_ce, _, _ = train_and_eval(
                ds, seed, **{**ABLATION_CFG, "gamma": 0.0, "delta": 0.0}
            )
            worst = max(worst, no_ce.all_acc)
        assert worst < 0.2, f"no-CE all_acc reaches {worst:.4f}, not below 2x chance"


def test_threshold_sweep_shape(e2e_run):
    _, _, ds, _, result, cfg, _ = e2e_run
    with criterion("threshold sweep: counts non-increasing, acc(0.9) >= acc(0.4)"):
        taus = [0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
        stats = replay_pseudo_selection(ds, result.params, result.centers, cfg, taus)
        counts = [stats[t]["selected"] for t in taus]
        assert all(a >= b for a, b in zip(counts, counts[1:])), counts
        assert counts[-1] > 0, "highest threshold selects nothing"
        acc_low = stats[0.4]["novel_accuracy"]
        acc_high = stats[0.9]["novel_accuracy"]
        assert not (math.isnan(acc_low) or math.isnan(acc_high))
        assert acc_high >= acc_low, f"acc(0.9)={acc_high:.4f} < acc(0.4)={acc_low:.4f}"


def test_hungarian_oracle():
    with criterion("Hungarian oracle: exact vs exhaustive search, 1000 matrices"):
        rng = np.random.default_rng(12345)
        start = time.perf_counter()
        for _ in range(1000):
            n = int(rng.integers(1, 7))
            w = rng.integers(0, 100, size=(n, n)).astype(float)
            _, got = hungarian(w)
            best = max(
                sum(w[i, p[i]] for i in range(n))
                for p in itertools.permutations(range(n))
            )
            assert got == pytest.approx(best)
        elapsed = time.perf_counter() - start
        assert elapsed < 10.0, f"took {elapsed:.1f}s"


def test_evaluation_invariances():
    with criterion("evaluation invariances under novel relabeling"):
        rng = np.random.default_rng(99)
        for _ in range(25):
            known = int(rng.integers(1, 5))
            novel = int(rng.integers(1, 5))
            total = known + novel
            n = int(rng.integers(50, 200))
            truth = rng.integers(0, total, size=n)
            pred = rng.integers(0, total, size=n)
            if not (truth >= known).any():
                truth[0] = known
            base = evaluate(pred, truth, known)

            perm = np.concatenate([np.arange(known), known + rng.permutation(novel)])
            remapped = perm[pred]
            out = evaluate(remapped, truth, known)
            assert out.seen_acc == pytest.approx(base.seen_acc)
            assert out.all_acc == pytest.approx(base.all_acc)
            assert out.novel_acc == pytest.approx(base.novel_acc)
            assert out.novel_nmi == pytest.approx(base.novel_nmi)

            novel_mask = truth >= known
            a = pred[novel_mask]
            relabel = rng.permutation(total)
            assert nmi(relabel[a], truth[novel_mask]) == pytest.approx(
                nmi(a, truth[novel_mask]), abs=1e-12
            )


def _cli(args, tmp, threads):
    env = dict(os.environ, SSOC_THREADS=str(threads))
    proc = subprocess.run(
        [sys.executable, "-m", "ssoc.cli", *args],
        cwd=tmp, env=env, capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return proc


def test_determinism_cli(tmp_path):
    with criterion("determinism: byte-identical CSVs, SSOC_THREADS 1/2/4"):
        _cli(
            ["gen-synth", "--classes", "6", "--dim", "16", "--per-class", "40",
             "--separation", "8", "--std", "1", "--seed", "3", "--out", "pool"],
            tmp_path, threads=1,
        )
        _cli(
            ["split", "--data", "pool/mixture.emb", "--label-ratio", "0.5",
             "--novel-ratio", "0.5", "--seed", "3", "--out", "split"],
            tmp_path, threads=1,
        )
        train_args = [
            "train", "--labeled", "split/labeled.emb",
            "--unlabeled", "split/unlabeled.emb", "--seed", "5",
            "--epochs", "8", "--novel", "3", "--set", "batch_size=32",
        ]
        for name, threads in (("a", 2), ("b", 2), ("t1", 1), ("t4", 4)):
            _cli(train_args + ["--out", f"run_{name}"], tmp_path, threads)

        ref = (tmp_path / "run_a" / "metrics.csv").read_bytes()
        assert ref == (tmp_path / "run_b" / "metrics.csv").read_bytes()
        assert ref == (tmp_path / "run_t1" / "metrics.csv").read_bytes()
        assert ref == (tmp_path / "run_t4" / "metrics.csv").read_bytes()
        assert (tmp_path / "run_a" / "last.ckpt").read_bytes() == (
            tmp_path / "run_b" / "last.ckpt"
        ).read_bytes()


def test_robustness_trend(e2e_run):
    _, _, _, report_seed0, _, _, _ = e2e_run
    with criterion("robustness: all_acc at novel 0.9 >= half of novel 0.5, 3 seeds"):
        for seed in (0, 1, 2):
            if seed == 0:
                rep_half = report_seed0
            else:
                _, _, ds = make_problem(seed=seed, novel_ratio=0.5)
                rep_half, _, _ = train_and_eval(ds, seed)
            _, _, ds9 = make_problem(seed=seed, novel_ratio=0.9)
            rep_nine, _, _ = train_and_eval(ds9, seed)
            assert rep_nine.all_acc >= 0.5 * rep_half.all_acc, (
                f"seed {seed}: {rep_nine.all_acc:.4f} < 0.5 * {rep_half.all_acc:.4f}"
            )

import math

import numpy as np
import pytest

from ssoc.errors import InvalidArgumentError
from ssoc.losses import (
    LossWeights,
    entropy_reg,
    pairwise_bce,
    pseudo_ce,
    supervised_ce,
    total_loss,
)


def random_probs(rng, rows, cols):
    raw = rng.random((rows, cols)) + 0.1
    return raw / raw.sum(axis=1, keepdims=True)


def fd_wrt(fn, arr, step=1e-7):
    grad = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + step
        hi = fn()
        arr[idx] = orig - step
        lo = fn()
        arr[idx] = orig
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def assert_close_grad(analytic, numeric, tol=1e-5):
    scale = max(np.abs(numeric).max(), 1e-10)
    assert np.abs(analytic - numeric).max() / scale < tol


class TestSupervisedCE:
    def test_onehot_match_is_zero(self):
        p = np.array([[1.0, 0.0, 0.0]])
        value, grad = supervised_ce(p, np.array([0]))
        assert value == pytest.approx(0.0)

    def test_uniform_is_log_c(self):
        p = np.full((4, 5), 0.2)
        value, _ = supervised_ce(p, np.zeros(4, dtype=np.int64))
        assert value == pytest.approx(math.log(5.0), abs=1e-12)

    def test_three_quarters(self):
        value, _ = supervised_ce(np.array([[0.75, 0.25]]), np.array([0]))
        assert value == pytest.approx(-math.log(0.75), abs=1e-12)
        assert value == pytest.approx(0.28768, abs=1e-5)

    def test_empty_batch(self):
        value, grad = supervised_ce(np.empty((0, 3)), np.empty(0, dtype=np.int64))
        assert value == 0.0
        assert grad.shape == (0, 3)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(0)
        p = random_probs(rng, 5, 4)
        y = rng.integers(0, 4, size=5)
        _, grad = supervised_ce(p, y)
        fd = fd_wrt(lambda: supervised_ce(p, y)[0], p)
        assert_close_grad(grad, fd)


class TestPseudoCE:
    def test_gate_closed(self):
        rng = np.random.default_rng(1)
        p1 = random_probs(rng, 4, 3)
        value, grad, n = pseudo_ce(p1, np.zeros(4, dtype=np.int64), np.full(4, 0.5), tau1=0.6)
        assert value == 0.0 and n == 0
        np.testing.assert_allclose(grad, 0.0)

    def test_onehot_target_zero_loss(self):
        p1 = np.array([[0.0, 1.0]])
        value, _, n = pseudo_ce(p1, np.array([1]), np.array([0.9]), tau1=0.6)
        assert value == pytest.approx(0.0)
        assert n == 1

    def test_half_probability(self):
        p1 = np.array([[0.5, 0.5]])
        value, grad, n = pseudo_ce(p1, np.array([0]), np.array([0.9]), tau1=0.6)
        assert value == pytest.approx(0.69315, abs=1e-5)
        assert n == 1
        assert grad[0, 0] == pytest.approx(-2.0)
        assert grad[0, 1] == 0.0

    def test_normalized_by_batch_not_selection(self):
        p1 = np.array([[0.5, 0.5], [0.5, 0.5]])
        conf = np.array([0.9, 0.1])
        value, _, n = pseudo_ce(p1, np.array([0, 0]), conf, tau1=0.6)
        assert n == 1
        assert value == pytest.approx(-math.log(0.5) / 2.0)

    def test_gate_monotone_in_tau(self):
        rng = np.random.default_rng(2)
        p1 = random_probs(rng, 30, 4)
        y2 = rng.integers(0, 4, size=30)
        conf = rng.random(30)
        counts = [
            pseudo_ce(p1, y2, conf, tau1=t)[2] for t in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
        ]
        assert counts == sorted(counts, reverse=True)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(3)
        p1 = random_probs(rng, 6, 4)
        y2 = rng.integers(0, 4, size=6)
        conf = rng.random(6)
        _, grad, _ = pseudo_ce(p1, y2, conf, tau1=0.5)
        fd = fd_wrt(lambda: pseudo_ce(p1, y2, conf, tau1=0.5)[0], p1)
        assert_close_grad(grad, fd)


class TestPairwiseBCE:
    def test_same_class_onehots(self):
        p = np.array([[1.0, 0.0], [1.0, 0.0]])
        z = np.array([[1.0, 0.0], [1.0, 0.1]])
        labels = np.array([0, 0])
        conf = np.array([1.0, 1.0])
        value, _, _, n = pairwise_bce(p, z, labels, conf, tau2=0.8, prob_floor=1e-9)
        assert n == 1
        assert value == pytest.approx(0.0, abs=1e-8)

    def test_different_class_onehots(self):
        p = np.array([[1.0, 0.0], [0.0, 1.0]])
        z = np.array([[1.0, 0.0], [1.0, 0.1]])
        labels = np.array([0, 1])
        conf = np.array([1.0, 1.0])
        value, _, _, n = pairwise_bce(p, z, labels, conf, tau2=0.8, prob_floor=1e-9)
        assert n == 1
        assert value == pytest.approx(0.0, abs=1e-8)

    def test_uniform_pair_gives_ln2(self):
        p = np.array([[0.5, 0.5], [0.5, 0.5]])
        z = np.array([[1.0, 0.0], [1.0, 0.0]])  # cosine 1 -> target 1
        labels = np.array([-1, -1])
        conf = np.array([1.0, 1.0])
        value, _, _, n = pairwise_bce(p, z, labels, conf, tau2=0.0)
        assert n == 1
        assert value == pytest.approx(0.69315, abs=1e-5)

    def test_no_pairs_selected(self):
        rng = np.random.default_rng(4)
        p = random_probs(rng, 4, 3)
        z = rng.normal(size=(4, 3))
        value, grad, _, n = pairwise_bce(
            p, z, np.full(4, -1), np.full(4, 0.2), tau2=0.9
        )
        assert value == 0.0 and n == 0
        np.testing.assert_allclose(grad, 0.0)

    def test_batch_order_invariance(self):
        rng = np.random.default_rng(5)
        p = random_probs(rng, 7, 3)
        z = rng.normal(size=(7, 3)) + 2.0
        labels = np.array([0, 1, -1, -1, 2, -1, 1])
        conf = rng.random(7) * 0.5 + 0.5
        value, _, _, n = pairwise_bce(p, z, labels, conf, tau2=0.6)
        perm = rng.permutation(7)
        value_p, _, _, n_p = pairwise_bce(p[perm], z[perm], labels[perm], conf[perm], tau2=0.6)
        assert n == n_p
        assert value == pytest.approx(value_p, abs=1e-12)

    def test_pair_gate_monotone_in_tau(self):
        rng = np.random.default_rng(6)
        p = random_probs(rng, 12, 4)
        z = rng.normal(size=(12, 4))
        labels = np.full(12, -1)
        conf = rng.random(12)
        counts = [
            pairwise_bce(p, z, labels, conf, tau2=t)[3] for t in np.linspace(0, 1, 8)
        ]
        assert counts == sorted(counts, reverse=True)

    def test_gradient_wrt_p_matches_fd(self):
        rng = np.random.default_rng(7)
        p = random_probs(rng, 6, 4)
        z = rng.normal(size=(6, 4)) + 1.5  # cosines strictly inside (0, 1)
        labels = np.array([0, 1, -1, -1, 2, -1])
        conf = np.full(6, 0.99)
        _, grad, _, _ = pairwise_bce(p, z, labels, conf, tau2=0.5)
        fd = fd_wrt(lambda: pairwise_bce(p, z, labels, conf, tau2=0.5)[0], p)
        assert_close_grad(grad, fd)

    def test_gradient_wrt_z_matches_fd(self):
        rng = np.random.default_rng(8)
        p = random_probs(rng, 5, 3)
        z = rng.normal(size=(5, 3)) + 1.5
        labels = np.array([0, -1, -1, 1, -1])
        conf = np.full(5, 0.99)
        _, _, d_z, _ = pairwise_bce(p, z, labels, conf, tau2=0.5, z_grad=True)
        fd = fd_wrt(lambda: pairwise_bce(p, z, labels, conf, tau2=0.5)[0], z)
        assert_close_grad(d_z, fd)

    def test_z_grad_off_returns_none(self):
        rng = np.random.default_rng(9)
        p = random_probs(rng, 3, 2)
        z = rng.normal(size=(3, 2))
        _, _, d_z, _ = pairwise_bce(p, z, np.full(3, -1), np.ones(3), tau2=0.0)
        assert d_z is None


class TestEntropyReg:
    def test_onehot_contributes_zero(self):
        value, _ = entropy_reg(np.array([[1.0, 0.0, 0.0]]))
        assert value == pytest.approx(0.0)

    def test_uniform_over_four(self):
        value, _ = entropy_reg(np.full((1, 4), 0.25))
        assert value == pytest.approx(-math.log(4.0), abs=1e-12)
        assert value == pytest.approx(-1.38629, abs=1e-5)

    def test_two_uniform_rows_over_two(self):
        value, _ = entropy_reg(np.full((2, 2), 0.5))
        assert value == pytest.approx(-0.69315, abs=1e-5)

    def test_value_range(self):
        rng = np.random.default_rng(10)
        p = random_probs(rng, 8, 6)
        value, _ = entropy_reg(p)
        assert -math.log(6.0) - 1e-12 <= value <= 0.0

    def test_uniform_minimizes_and_grad_projects_to_zero(self):
        p = np.full((3, 5), 0.2)
        value, grad = entropy_reg(p)
        assert value == pytest.approx(-math.log(5.0), abs=1e-12)
        projected = grad - grad.mean(axis=1, keepdims=True)
        np.testing.assert_allclose(projected, 0.0, atol=1e-12)

    def test_gradient_matches_fd(self):
        rng = np.random.default_rng(11)
        p = random_probs(rng, 5, 4)
        for mode in ("per_sample", "batch_marginal"):
            _, grad = entropy_reg(p, mode=mode)
            fd = fd_wrt(lambda: entropy_reg(p, mode=mode)[0], p)
            assert_close_grad(grad, fd)

    def test_batch_marginal_minimized_by_uniform_marginal(self):
        # rows individually one-hot but marginal uniform: per-sample is 0,
        # batch-marginal sits at its minimum
        p = np.array([[1.0, 0.0], [0.0, 1.0]])
        per_sample, _ = entropy_reg(p, mode="per_sample")
        marginal, _ = entropy_reg(p, mode="batch_marginal")
        assert per_sample == pytest.approx(0.0)
        assert marginal == pytest.approx(-math.log(2.0), abs=1e-12)


class TestTotalLoss:
    def combined(self, rng, weights):
        n_l, n_u, c = 3, 4, 4
        p_l = random_probs(rng, n_l, c)
        p_u = random_probs(rng, n_u, c)
        y_l = rng.integers(0, 2, size=n_l)
        y2 = rng.integers(0, c, size=n_u)
        conf2 = rng.random(n_u)
        z = rng.normal(size=(n_l + n_u, c)) + 1.0
        p_all = np.vstack([p_l, p_u])
        labels_all = np.concatenate([y_l, np.full(n_u, -1)])
        conf_all = p_all.max(axis=1)

        ce_l = supervised_ce(p_l, y_l, weights.prob_floor)
        ce_u = pseudo_ce(p_u, y2, conf2, weights.tau1, weights.prob_floor)
        bce = pairwise_bce(p_all, z, labels_all, conf_all, weights.tau2, weights.prob_floor)
        reg = entropy_reg(p_all, weights.prob_floor)
        return ce_l, ce_u, bce, reg, n_l

    def test_weight_masking(self):
        rng = np.random.default_rng(12)
        weights = LossWeights(alpha=0.0, beta=0.0, gamma=1.0, delta=0.0)
        ce_l, ce_u, bce, reg, n_l = self.combined(rng, weights)
        breakdown, d_p, _ = total_loss(ce_l, ce_u, bce, reg, weights, n_l)
        assert breakdown.total == pytest.approx(ce_l[0])
        np.testing.assert_allclose(d_p[:n_l], ce_l[1])
        np.testing.assert_allclose(d_p[n_l:], 0.0)

    def test_weighted_sum_identity(self):
        rng = np.random.default_rng(13)
        weights = LossWeights(alpha=0.7, beta=0.3, gamma=1.1, delta=0.9, tau1=0.3, tau2=0.2)
        ce_l, ce_u, bce, reg, n_l = self.combined(rng, weights)
        breakdown, d_p, _ = total_loss(ce_l, ce_u, bce, reg, weights, n_l)
        want = (
            weights.gamma * ce_l[0] + weights.delta * ce_u[0]
            + weights.alpha * bce[0] + weights.beta * reg[0]
        )
        assert breakdown.total == pytest.approx(want, abs=1e-12)
        rebuilt = weights.alpha * bce[1] + weights.beta * reg[1]
        rebuilt[:n_l] += weights.gamma * ce_l[1]
        rebuilt[n_l:] += weights.delta * ce_u[1]
        np.testing.assert_allclose(d_p, rebuilt, atol=1e-12)

    def test_breakdown_invariant(self):
        rng = np.random.default_rng(14)
        weights = LossWeights()
        ce_l, ce_u, bce, reg, n_l = self.combined(rng, weights)
        b, _, _ = total_loss(ce_l, ce_u, bce, reg, weights, n_l)
        recomposed = (
            weights.gamma * b.ce_labeled + weights.delta * b.ce_pseudo
            + weights.alpha * b.bce_pair + weights.beta * b.entropy_reg
        )
        assert b.total == pytest.approx(recomposed, abs=1e-9)


def test_weight_validation():
    with pytest.raises(InvalidArgumentError):
        LossWeights(alpha=-0.1).validate()
    with pytest.raises(InvalidArgumentError):
        LossWeights(tau1=1.5).validate()
    with pytest.raises(InvalidArgumentError):
        LossWeights(prob_floor=0.0).validate()
    with pytest.raises(InvalidArgumentError):
        LossWeights(prob_floor=0.01).validate()

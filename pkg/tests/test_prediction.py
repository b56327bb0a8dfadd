"""Towers, losses, and the joint objective."""

import numpy as np
import pytest

from dfar.errors import ConfigError
from dfar.prediction import (LossWeights, PredictionTower, bce_loss, bpr_loss,
                             joint_loss, l2_norm, sum_pool)
from dfar.tensor import GradientTape, Tensor


def rand(shape, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, shape).astype(np.float32)


class TestSumPool:
    def test_all_padding_gives_zero(self):
        out = sum_pool(Tensor(rand((1, 3, 4), 1)), np.zeros((1, 3), dtype=np.uint8))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_single_row(self):
        seq = rand((1, 3, 4), 2)
        out = sum_pool(Tensor(seq), np.array([[0, 1, 0]], dtype=np.uint8))
        np.testing.assert_allclose(out.data[0], seq[0, 1])

    def test_two_one_hot_rows(self):
        seq = np.array([[[1.0, 0.0], [0.0, 1.0]]], dtype=np.float32)
        out = sum_pool(Tensor(seq), np.ones((1, 2), dtype=np.uint8))
        np.testing.assert_allclose(out.data[0], [1.0, 1.0])


class TestTower:
    def test_zero_weights_zero_logit(self):
        tower = PredictionTower(np.random.default_rng(0), embed_dim=3, prefix="t")
        tower.w1.data = np.zeros_like(tower.w1.data)
        tower.w2.data = np.zeros_like(tower.w2.data)
        out = tower.forward(Tensor(rand((4, 12), 1)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_hand_set_single_unit_matches_direct_evaluation(self):
        d = 2
        tower = PredictionTower(np.random.default_rng(1), embed_dim=d, prefix="t")
        x = rand((1, 4 * d), 2)
        w1 = rand((4 * d, 2 * d), 3)
        w2 = rand((2 * d, 1), 4)
        tower.w1.data, tower.w2.data = w1, w2
        tower.b1.data = np.full(2 * d, 0.05, dtype=np.float32)
        tower.b2.data = np.array([-0.2], dtype=np.float32)
        out = tower.forward(Tensor(x))

        def ln(v):
            mu = v.mean()
            return (v - mu) / np.sqrt(((v - mu) ** 2).mean() + 1e-5)

        h = ln(x[0])
        h = np.maximum(h @ w1 + 0.05, 0.0)
        h = ln(h)
        expected = h @ w2 - 0.2
        assert out.data[0] == pytest.approx(expected[0], abs=1e-5)

    @pytest.mark.parametrize("d", [2, 8, 32])
    def test_scalar_output_contract(self, d):
        tower = PredictionTower(np.random.default_rng(2), embed_dim=d, prefix="t")
        out = tower.forward(Tensor(rand((5, 4 * d), 3)))
        assert out.shape == (5,)


class TestBprLoss:
    def test_equal_logits(self):
        out = bpr_loss(Tensor([1.2]), Tensor([1.2]), np.array([1]))
        assert out.item() == pytest.approx(0.6931, abs=1e-4)

    def test_positive_margin_two(self):
        # sigma(2) = 0.8808, -log(0.8808) = 0.1269
        out = bpr_loss(Tensor([2.5]), Tensor([0.5]), np.array([1]))
        assert out.item() == pytest.approx(0.1269, abs=1e-4)

    def test_swap_symmetry(self):
        a, b = 0.7, -0.4
        pos = bpr_loss(Tensor([a]), Tensor([b]), np.array([1])).item()
        swapped = bpr_loss(Tensor([b]), Tensor([a]), np.array([0])).item()
        assert pos == pytest.approx(swapped, abs=1e-7)

    def test_monotone_decreasing_in_margin_for_positive_labels(self):
        margins = np.linspace(-3, 3, 25)
        losses = [bpr_loss(Tensor([m]), Tensor([0.0]), np.array([1])).item()
                  for m in margins]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_batch_mean(self):
        out = bpr_loss(Tensor([2.5, 1.2]), Tensor([0.5, 1.2]),
                       np.array([1, 1])).item()
        assert out == pytest.approx((0.1269 + 0.6931) / 2, abs=1e-4)


class TestBceLoss:
    def test_logit_zero_positive_label(self):
        assert bce_loss(Tensor([0.0]), np.array([1])).item() == pytest.approx(
            0.6931, abs=1e-4)

    def test_saturated_positive(self):
        assert bce_loss(Tensor([30.0]), np.array([1])).item() == pytest.approx(
            0.0, abs=1e-6)

    def test_negative_label_at_minus_one(self):
        # sigma(-1) = 0.2689, -log(1 - 0.2689) = 0.3133
        assert bce_loss(Tensor([-1.0]), np.array([0])).item() == pytest.approx(
            0.3133, abs=1e-4)

    def test_convexity_around_zero(self):
        base = bce_loss(Tensor([0.0]), np.array([1])).item()
        for logit in (0.5, 1.0, 2.0):
            a = bce_loss(Tensor([logit]), np.array([1])).item()
            b = bce_loss(Tensor([-logit]), np.array([1])).item()
            assert a + b >= 2 * base - 1e-6


class TestJointLoss:
    def test_zero_weights_reduce_to_main_loss(self):
        bce = Tensor(np.float32(0.42))
        weights = LossWeights(bpr=0.0, disentangle=0.0, reg=0.0)
        out = joint_loss(bce, None, None, [], weights)
        assert out.item() == pytest.approx(0.42, abs=1e-7)

    def test_linear_in_bpr_weight(self):
        bce = Tensor(np.float32(0.5))
        bpr = Tensor(np.float32(0.3))
        weights = LossWeights(bpr=1e-2, disentangle=0.0, reg=0.0)
        out = joint_loss(bce, bpr, None, [], weights)
        assert out.item() == pytest.approx(0.5 + 0.01 * 0.3, abs=1e-6)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(bpr=-0.1).validate()

    def test_l2_norm_is_unsquared(self):
        params = [Tensor([3.0], requires_grad=True), Tensor([4.0], requires_grad=True)]
        assert l2_norm(params).item() == pytest.approx(5.0, abs=1e-6)

    def test_joint_gradient_is_weighted_sum_of_component_gradients(self):
        p = Tensor(rand((3,), 5), requires_grad=True, name="p")

        def bce_of(pt):
            return bce_loss(pt, np.array([1, 0, 1]))

        def bpr_of(pt):
            return bpr_loss(pt, Tensor(np.zeros(3, dtype=np.float32)),
                            np.array([1, 0, 1]))

        weights = LossWeights(bpr=0.25, disentangle=0.0, reg=0.5)
        with GradientTape() as tape:
            joint = joint_loss(bce_of(p), bpr_of(p), None, [p], weights)
        g_joint = tape.gradients(joint)[p]

        with GradientTape() as tape:
            g_bce = tape.gradients(bce_of(p))[p]
        with GradientTape() as tape:
            g_bpr = tape.gradients(bpr_of(p))[p]
        with GradientTape() as tape:
            g_reg = tape.gradients(l2_norm([p]))[p]
        np.testing.assert_allclose(g_joint, g_bce + 0.25 * g_bpr + 0.5 * g_reg,
                                   atol=1e-6)

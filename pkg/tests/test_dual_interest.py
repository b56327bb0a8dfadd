"""Dual-interest layer: split/refine/aggregate semantics and the
cosine disentangling loss."""

import numpy as np
import pytest

from _oracles import fha_loop_oracle, max_rel_err, numeric_grad
from dfar.attention import AttentionBlock, AttentionConfig
from dfar.dual_interest import (ScoreMlp, aggregate, branch_masks,
                                disentangle_loss, split_by_feedback,
                                target_scores)
from dfar.tensor import GradientTape, Tensor


def rand(shape, seed=0, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, shape).astype(np.float32)


class TestSplit:
    def test_all_positive_routes_everything_to_pos(self):
        s = Tensor(rand((1, 3, 4), 1))
        fb = np.ones((1, 3), dtype=np.int8)
        valid = np.ones((1, 3), dtype=np.uint8)
        pos, neg = split_by_feedback(s, fb, valid)
        np.testing.assert_array_equal(pos.data, s.data)
        np.testing.assert_array_equal(neg.data, 0.0)

    def test_mixed_rows_route_by_label(self):
        s = Tensor(rand((1, 2, 3), 2))
        fb = np.array([[1, 0]], dtype=np.int8)
        valid = np.ones((1, 2), dtype=np.uint8)
        pos, neg = split_by_feedback(s, fb, valid)
        np.testing.assert_array_equal(pos.data[0, 1], 0.0)
        np.testing.assert_array_equal(neg.data[0, 0], 0.0)
        np.testing.assert_array_equal(pos.data[0, 0], s.data[0, 0])
        np.testing.assert_array_equal(neg.data[0, 1], s.data[0, 1])

    def test_partition_identity_on_real_rows(self):
        rng = np.random.default_rng(3)
        s = Tensor(rand((2, 5, 4), 3))
        fb = rng.integers(0, 2, (2, 5)).astype(np.int8)
        valid = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=np.uint8)
        pos, neg = split_by_feedback(s, fb, valid)
        rebuilt = pos.data + neg.data
        for b in range(2):
            for i in range(5):
                if valid[b, i]:
                    np.testing.assert_array_equal(rebuilt[b, i], s.data[b, i])
                else:
                    np.testing.assert_array_equal(rebuilt[b, i], 0.0)


class TestRefine:
    def make_refiner(self, d=4, h=2, t=4, seed=9):
        cfg = AttentionConfig(embed_dim=d, heads=h, max_len=t, variant="fha")
        return AttentionBlock(cfg, np.random.default_rng(seed), prefix="refine")

    def test_empty_branch_refines_to_zero(self):
        block = self.make_refiner()
        x = Tensor(np.zeros((1, 4, 4), dtype=np.float32))
        out, _ = block.forward(x, np.zeros((1, 4), dtype=np.uint8))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_single_row_self_attends_with_weight_one(self):
        block = self.make_refiner()
        x = np.zeros((1, 4, 4), dtype=np.float32)
        x[0, 1] = [0.5, -0.2, 0.1, 0.9]
        valid = np.array([[0, 1, 0, 0]], dtype=np.uint8)
        out, probs = block.forward(Tensor(x), valid, want_probs=True)
        # each head attends over H admissible cells (same position, both heads)
        np.testing.assert_allclose(probs[0, :, 1].sum(axis=(-2, -1)), 1.0, atol=1e-6)
        assert np.all(probs[0, :, 1, :, 1] > 0)
        assert np.all(out.data[0, [0, 2, 3]] == 0.0)

    def test_matches_quadruple_loop_oracle_on_branch(self):
        block = self.make_refiner(seed=10)
        x = rand((1, 4, 4), 11)
        fb = np.array([[1, 0, 1, 1]], dtype=np.int8)
        valid = np.ones((1, 4), dtype=np.uint8)
        pos_valid, _ = branch_masks(fb, valid)
        masked = x * pos_valid[..., None]
        out, _ = block.forward(Tensor(masked), pos_valid)
        expected, _ = fha_loop_oracle(masked[0], block.query_proj.data,
                                      block.key_proj.data, block.value_proj.data,
                                      block.out_proj.data, pos_valid[0])
        np.testing.assert_allclose(out.data[0], expected, atol=1e-5)


class TestTargetScores:
    def test_zero_weights_zero_scores(self):
        mlp = ScoreMlp(np.random.default_rng(0), embed_dim=4, out_dim=4, prefix="s")
        for p in mlp.params().values():
            p.data = np.zeros_like(p.data)
        scores = target_scores(mlp, Tensor(rand((2, 4), 1)), Tensor(rand((2, 3, 4), 2)))
        np.testing.assert_array_equal(scores.data, 0.0)

    def test_hand_set_weights_reproduce_direct_evaluation(self):
        d = 2
        mlp = ScoreMlp(np.random.default_rng(0), embed_dim=d, out_dim=d, prefix="s")
        w1 = np.array([[1, 0], [0, 1], [1, 1], [0, 1]], dtype=np.float32)  # (2d, d)
        w2 = np.array([[1, 2], [0, 1]], dtype=np.float32)
        mlp.w1.data = w1
        mlp.b1.data = np.array([0.1, -0.1], dtype=np.float32)
        mlp.w2.data = w2
        mlp.b2.data = np.array([0.0, 0.5], dtype=np.float32)
        target = np.array([[0.5, -1.0]], dtype=np.float32)
        row = np.array([[[2.0, 3.0]]], dtype=np.float32)
        scores = target_scores(mlp, Tensor(target), Tensor(row))
        joined = np.concatenate([target[0], row[0, 0]])
        hidden = np.maximum(joined @ w1 + mlp.b1.data, 0)
        expected = hidden @ w2 + mlp.b2.data
        np.testing.assert_allclose(scores.data[0, 0], expected, atol=1e-6)

    @pytest.mark.parametrize("t", [1, 5, 50])
    def test_output_shape_contract(self, t):
        mlp = ScoreMlp(np.random.default_rng(1), embed_dim=4, out_dim=4, prefix="s")
        scores = target_scores(mlp, Tensor(rand((2, 4), 2)), Tensor(rand((2, t, 4), 3)))
        assert scores.shape == (2, t, 4)


class TestAggregate:
    def test_single_valid_position_passes_through(self):
        scores = Tensor(rand((1, 3, 4), 4))
        seq = Tensor(rand((1, 3, 4), 5))
        valid = np.array([[0, 1, 0]], dtype=np.uint8)
        _, pooled = aggregate(scores, seq, valid)
        np.testing.assert_allclose(pooled.data[0], seq.data[0, 1], atol=1e-6)

    def test_equal_scores_average_two_rows(self):
        scores = Tensor(np.zeros((1, 2, 3), dtype=np.float32))
        seq = Tensor(np.array([[[1, 0, 2], [0, 4, 2]]], dtype=np.float32))
        valid = np.ones((1, 2), dtype=np.uint8)
        _, pooled = aggregate(scores, seq, valid)
        np.testing.assert_allclose(pooled.data[0], [0.5, 2.0, 2.0], atol=1e-6)

    def test_matches_per_dimension_softmax_oracle(self):
        rng = np.random.default_rng(6)
        scores = rng.uniform(-2, 2, (2, 4, 3)).astype(np.float32)
        seq = rng.uniform(-1, 1, (2, 4, 3)).astype(np.float32)
        valid = np.array([[1, 1, 1, 0], [1, 0, 1, 1]], dtype=np.uint8)
        weights, pooled = aggregate(Tensor(scores), Tensor(seq), valid)
        for b in range(2):
            for col in range(3):
                rows = [i for i in range(4) if valid[b, i]]
                exps = np.exp(scores[b, rows, col] - scores[b, rows, col].max())
                w = exps / exps.sum()
                expected = sum(wi * seq[b, i, col] for wi, i in zip(w, rows))
                assert pooled.data[b, col] == pytest.approx(expected, abs=1e-5)
                dead = [i for i in range(4) if not valid[b, i]]
                assert np.all(weights.data[b, dead, col] == 0.0)

    def test_column_mass_sums_to_one_on_valid(self):
        scores = Tensor(rand((1, 5, 2), 7))
        seq = Tensor(rand((1, 5, 2), 8))
        valid = np.array([[1, 1, 0, 1, 0]], dtype=np.uint8)
        weights, _ = aggregate(scores, seq, valid)
        np.testing.assert_allclose(weights.data.sum(axis=1), 1.0, atol=1e-5)

    def test_empty_branch_pools_zero(self):
        scores = Tensor(rand((1, 3, 2), 9))
        seq = Tensor(rand((1, 3, 2), 10))
        _, pooled = aggregate(scores, seq, np.zeros((1, 3), dtype=np.uint8))
        np.testing.assert_array_equal(pooled.data, 0.0)


class TestDisentangleLoss:
    def test_identical_vectors(self):
        v = Tensor([0.3, 0.4, -0.1])
        assert disentangle_loss(v, v).item() == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_vectors(self):
        assert disentangle_loss(Tensor([1.0, 0.0]), Tensor([0.0, 2.0])).item() == 0.0

    def test_opposite_vectors(self):
        v = np.array([0.5, -1.0], dtype=np.float32)
        out = disentangle_loss(Tensor(v), Tensor(-v)).item()
        assert out == pytest.approx(-1.0, abs=1e-6)

    def test_scale_invariance_and_range(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a = rng.uniform(-1, 1, 6).astype(np.float32)
            b = rng.uniform(-1, 1, 6).astype(np.float32)
            base = disentangle_loss(Tensor(a), Tensor(b)).item()
            scaled = disentangle_loss(Tensor(3.7 * a), Tensor(0.2 * b)).item()
            assert -1.0 - 1e-5 <= base <= 1.0 + 1e-5
            assert scaled == pytest.approx(base, abs=1e-5)

    def test_gradient_matches_finite_differences(self):
        a = rand((4,), 12)
        b = rand((4,), 13)
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        with GradientTape() as tape:
            loss = disentangle_loss(ta, tb)
        grads = tape.gradients(loss)

        def forward(av, bv):
            return disentangle_loss(Tensor(av), Tensor(bv)).item()

        assert max_rel_err(grads[ta], numeric_grad(forward, [a, b], 0)) < 1e-2
        assert max_rel_err(grads[tb], numeric_grad(forward, [a, b], 1)) < 1e-2

    def test_empty_branch_safe_with_finite_gradients(self):
        pooled_pos = Tensor(rand((2, 4), 14), requires_grad=True)
        pooled_neg = Tensor(np.zeros((2, 4), dtype=np.float32), requires_grad=True)
        with GradientTape() as tape:
            loss = disentangle_loss(pooled_pos, pooled_neg)
        assert loss.item() == 0.0
        grads = tape.gradients(loss)
        assert np.all(np.isfinite(grads[pooled_pos]))
        assert np.all(np.isfinite(grads[pooled_neg]))
        np.testing.assert_array_equal(grads[pooled_pos], 0.0)

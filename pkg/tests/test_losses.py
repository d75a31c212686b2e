import math

import numpy as np
import pytest

from qalign.losses import (
    LabelOutOfRangeError,
    LossBreakdown,
    contrastive_loss,
    contrastive_loss_grads,
    task_loss,
    task_loss_grads,
    total_loss,
)
from qalign.errors import InputError


def softmax_ce_oracle(logits, target):
    """Independent dense cross-entropy: direct exp/sum, no shared code path."""
    exps = [math.exp(v) for v in logits]
    return -math.log(exps[target] / sum(exps))


def contrastive_oracle(O, P):
    """Brute-force enumeration over the dense logits matrix."""
    n = len(O)
    Q = [[sum(O[i][k] * P[j][k] for k in range(len(O[0]))) for j in range(n)] for i in range(n)]
    row = sum(softmax_ce_oracle(Q[i], i) for i in range(n)) / n
    col = sum(softmax_ce_oracle([Q[i][j] for i in range(n)], j) for j in range(n)) / n
    return (row + col) / 2


class TestTaskLoss:
    def test_peaked_logits_vanishing_loss(self):
        t, margin = 4, 20.0
        start = np.zeros((1, t))
        end = np.zeros((1, t))
        start[0, 2] = margin
        end[0, 3] = margin
        loss = task_loss(start, end, np.array([2]), np.array([3]))
        oracle = (softmax_ce_oracle(start[0], 2) + softmax_ce_oracle(end[0], 3)) / 2
        assert loss == pytest.approx(oracle, abs=1e-15)
        assert loss < 1e-8

    def test_uniform_zero_logits_ln4(self):
        logits = np.zeros((2, 4))
        labels = np.array([0, 3])
        loss = task_loss(logits, logits, labels, labels)
        assert loss == pytest.approx(math.log(4), abs=1e-12)

    def test_swapping_heads_and_labels_is_symmetric(self):
        rng = np.random.default_rng(0)
        start, end = rng.normal(size=(2, 3, 7))
        s_labels = np.array([1, 6, 0])
        e_labels = np.array([2, 3, 5])
        assert task_loss(start, end, s_labels, e_labels) == task_loss(
            end, start, e_labels, s_labels
        )

    def test_label_out_of_range(self):
        logits = np.zeros((1, 4))
        with pytest.raises(LabelOutOfRangeError):
            task_loss(logits, logits, np.array([4]), np.array([0]))
        with pytest.raises(LabelOutOfRangeError):
            task_loss(logits, logits, np.array([0]), np.array([-1]))

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            task_loss(np.zeros((1, 4)), np.zeros((2, 4)), np.array([0]), np.array([0]))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        start = rng.normal(size=(2, 5))
        end = rng.normal(size=(2, 5))
        s_labels = np.array([1, 4])
        e_labels = np.array([0, 2])
        _, d_start, d_end = task_loss_grads(start, end, s_labels, e_labels)
        h = 1e-7
        for grad, logits in ((d_start, start), (d_end, end)):
            for idx in np.ndindex(logits.shape):
                orig = logits[idx]
                logits[idx] = orig + h
                up = task_loss(start, end, s_labels, e_labels)
                logits[idx] = orig - h
                down = task_loss(start, end, s_labels, e_labels)
                logits[idx] = orig
                assert abs(grad[idx] - (up - down) / (2 * h)) < 1e-7

    def test_stability_with_huge_logits(self):
        logits = np.full((1, 4), 1e4)
        logits[0, 1] = 1e4 + 3
        loss = task_loss(logits, logits, np.array([1]), np.array([1]))
        assert np.isfinite(loss)


class TestContrastiveLoss:
    def test_identity_2x2_closed_form(self):
        eye = np.eye(2)
        loss = contrastive_loss(eye, eye)
        assert loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
        assert loss == pytest.approx(0.313262, abs=1e-6)
        assert loss == pytest.approx(contrastive_oracle(eye.tolist(), eye.tolist()), abs=1e-12)

    def test_single_row_is_exactly_zero(self):
        rng = np.random.default_rng(5)
        O = rng.normal(size=(1, 4))
        P = rng.normal(size=(1, 4))
        assert contrastive_loss(O, P) == 0.0

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(7)
        O = rng.normal(size=(3, 5))
        P = rng.normal(size=(3, 5))
        assert contrastive_loss(O, P) == pytest.approx(
            contrastive_oracle(O.tolist(), P.tolist()), abs=1e-9
        )

    def test_symmetry_and_joint_permutation_100_seeds(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = 2 + seed % 5
            O = rng.normal(size=(n, 4))
            P = rng.normal(size=(n, 4))
            assert abs(contrastive_loss(O, P) - contrastive_loss(P, O)) < 1e-9
            perm = rng.permutation(n)
            assert abs(contrastive_loss(O, P) - contrastive_loss(O[perm], P[perm])) < 1e-9

    def test_non_negative(self):
        for seed in range(30):
            rng = np.random.default_rng(seed)
            O = rng.normal(size=(4, 3)) * (1 + seed)
            P = rng.normal(size=(4, 3))
            assert contrastive_loss(O, P) >= 0.0

    def test_scale_drives_dominant_diagonal_loss_to_zero(self):
        rng = np.random.default_rng(11)
        base = rng.normal(size=(4, 6))
        O = base + 0.1 * rng.normal(size=(4, 6))
        P = base  # Q diagonal strictly dominant
        losses = [contrastive_loss(s * O, s * P) for s in (1.0, 4.0, 16.0)]
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-3

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(13)
        O = rng.normal(size=(3, 4))
        P = rng.normal(size=(3, 4))
        _, dO, dP = contrastive_loss_grads(O, P)
        h = 1e-7
        for grad, mat in ((dO, O), (dP, P)):
            for idx in np.ndindex(mat.shape):
                orig = mat[idx]
                mat[idx] = orig + h
                up = contrastive_loss(O, P)
                mat[idx] = orig - h
                down = contrastive_loss(O, P)
                mat[idx] = orig
                assert abs(grad[idx] - (up - down) / (2 * h)) < 1e-7

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            contrastive_loss(np.zeros((2, 3)), np.zeros((3, 3)))


class TestTotalLoss:
    def test_zero_weight(self):
        out = total_loss(1.7, 0.9, w=0.0)
        assert out.l_total == 1.7

    def test_table_arithmetic(self):
        out = total_loss(1.0, 0.4, w=0.05)
        assert out == LossBreakdown(1.0, 0.4, 0.05, 1.02)

    def test_gate_off_records_zero(self):
        out = total_loss(2.0, 123.0, w=0.05, apply_contrastive=False)
        assert out.l_contrastive == 0.0
        assert out.l_total == 2.0

    def test_exact_bookkeeping_identity(self):
        out = total_loss(1.234567, 0.7654321, w=0.05)
        assert out.l_total - (out.l_task + out.w_contrastive * out.l_contrastive) == 0.0

    def test_negative_weight_rejected(self):
        with pytest.raises(InputError):
            total_loss(1.0, 1.0, w=-0.1)

    def test_components_non_negative_for_real_losses(self):
        out = total_loss(0.0, 0.0, w=0.05)
        assert out.l_task >= 0 and out.l_contrastive >= 0 and out.l_total >= 0

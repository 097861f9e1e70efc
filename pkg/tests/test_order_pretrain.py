"""Gaussian affinity labels and the order-prediction objective."""

import numpy as np
import pytest

import dcr.tensor as T
from dcr.gradcheck import finite_diff_check
from dcr.order_pretrain import (
    AffinityLabels,
    gaussian_affinity,
    order_loss,
    position_accuracy,
)
from dcr.reasoners import ReasonerConfig, TransformerReasoner, sinusoidal_table


class TestGaussianAffinity:
    def test_diagonal_is_one(self):
        labels = gaussian_affinity(10, sigma=5.0)
        np.testing.assert_allclose(np.diag(labels.matrix), 1.0)

    def test_bandwidth_five_at_distance_five(self):
        labels = gaussian_affinity(12, sigma=5.0)
        assert labels.matrix[0, 5] == pytest.approx(np.exp(-1.0), rel=1e-12)

    def test_symmetric_positive(self):
        labels = gaussian_affinity(9, sigma=3.0)
        np.testing.assert_allclose(labels.matrix, labels.matrix.T)
        assert (labels.matrix > 0).all()

    def test_rows_normalize_to_one(self):
        labels = gaussian_affinity(16, sigma=5.0)
        np.testing.assert_allclose(labels.normalized.sum(axis=1), 1.0, atol=1e-9)

    def test_tiny_sigma_approaches_onehot(self):
        labels = gaussian_affinity(8, sigma=1e-3)
        np.testing.assert_allclose(labels.normalized, np.eye(8), atol=1e-12)

    def test_rows_unimodal_with_mode_on_diagonal(self):
        labels = gaussian_affinity(14, sigma=4.0)
        for j, row in enumerate(labels.normalized):
            assert row.argmax() == j
            assert (np.diff(row[: j + 1]) >= -1e-15).all()   # rising to the mode
            assert (np.diff(row[j:]) <= 1e-15).all()          # falling after it

    def test_invalid_sigma_rejected(self):
        with pytest.raises(ValueError):
            gaussian_affinity(5, sigma=0.0)


class TestOrderLoss:
    def _table(self, k, dim):
        return T.Tensor(sinusoidal_table(k, dim), requires_grad=True)

    def test_aligned_tokens_beat_every_point_mass_alternative(self):
        k, dim = 8, 16
        table = self._table(k, dim)
        labels = gaussian_affinity(k, sigma=5.0)
        tokens = T.Tensor(table.data.copy())
        temp = 1e-3  # predictions collapse to a one-hot at the argmax position
        aligned = order_loss(tokens, table, labels, temperature=temp).item()
        # among point-mass predictions, the one at the true position minimizes
        # the soft-label cross entropy: any cyclic misalignment must cost more
        for shift in range(1, k):
            rolled = T.Tensor(np.roll(table.data, shift, axis=0))
            assert order_loss(rolled, table, labels, temperature=temp).item() > aligned
        # and the prediction really is (numerically) one-hot and correct
        from dcr.order_pretrain import position_accuracy

        assert position_accuracy(tokens.data, table.data) == 1.0

    def test_random_tokens_chance_accuracy(self):
        k, dim = 8, 32
        rng = np.random.default_rng(0)
        table = sinusoidal_table(k, dim)
        accs = [
            position_accuracy(rng.normal(size=(k, dim)), table)
            for _ in range(400)
        ]
        assert abs(np.mean(accs) - 1 / k) < 0.03

    def test_temperature_must_be_positive(self):
        k = 6
        with pytest.raises(ValueError):
            order_loss(T.Tensor(np.ones((k, 4))), T.Tensor(np.ones((k, 4))),
                       gaussian_affinity(k), temperature=0.0)

    def test_label_shape_checked(self):
        with pytest.raises(ValueError):
            order_loss(T.Tensor(np.ones((6, 4))), T.Tensor(np.ones((6, 4))),
                       gaussian_affinity(5), temperature=0.1)

    def test_gradients_reach_tokens_and_table(self):
        rng = np.random.default_rng(1)
        k, dim = 7, 12
        tokens = T.Tensor(rng.normal(size=(k, dim)), requires_grad=True)
        table = T.Tensor(rng.normal(size=(k, dim)), requires_grad=True)
        labels = gaussian_affinity(k)
        loss = order_loss(tokens, table, labels, temperature=0.05)
        loss.backward()
        assert tokens.grad is not None and np.abs(tokens.grad).max() > 0
        assert table.grad is not None and np.abs(table.grad).max() > 0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        k, dim = 6, 10
        table = T.Tensor(rng.normal(size=(k, dim)))
        labels = gaussian_affinity(k)
        tokens = T.Tensor(rng.normal(size=(k, dim)), requires_grad=True)
        err = finite_diff_check(lambda t: order_loss(t, table, labels, temperature=0.1), tokens)
        assert err < 1e-4

    def test_batched_matches_mean_of_instances(self):
        rng = np.random.default_rng(3)
        k, dim = 5, 8
        table = T.Tensor(rng.normal(size=(k, dim)))
        labels = gaussian_affinity(k)
        batch = rng.normal(size=(3, k, dim))
        whole = order_loss(T.Tensor(batch), table, labels, temperature=0.07).item()
        singles = [order_loss(T.Tensor(batch[i]), table, labels, temperature=0.07).item() for i in range(3)]
        assert whole == pytest.approx(np.mean(singles), rel=1e-9)

    def test_invariant_under_joint_permutation_of_frames_and_labels(self):
        """Permuting encoder inputs permutes tokens identically (no
        positions), so permuting the label rows the same way leaves the
        loss unchanged."""
        rng = np.random.default_rng(4)
        config = ReasonerConfig(architecture="transformer", input_dim=6, latent_dim=16,
                                layers=1, heads=2, dropout=0.0, max_positions=16, dtype="f64")
        model = TransformerReasoner(config, seed=0)
        k = 10
        frames = rng.normal(size=(k, 6))
        labels = gaussian_affinity(k)
        table = model.params["pos_table"][:k]

        _, tok1 = model.forward_batch(frames, np.ones(k), use_positional_encoding=False)
        loss1 = order_loss(tok1, table, labels, temperature=0.05).item()

        perm = np.random.default_rng(5).permutation(k)
        _, tok2 = model.forward_batch(frames[perm], np.ones(k), use_positional_encoding=False)
        permuted_labels = AffinityLabels(sigma=labels.sigma, matrix=labels.matrix[perm])
        loss2 = order_loss(tok2, table, permuted_labels, temperature=0.05).item()
        assert loss2 == pytest.approx(loss1, abs=1e-9)


class TestPositionAccuracy:
    def test_perfect_alignment(self):
        table = sinusoidal_table(9, 12)
        assert position_accuracy(table.copy(), table) == 1.0

    def test_shuffled_tokens_match_fixed_points(self):
        table = sinusoidal_table(8, 12)
        perm = np.array([3, 1, 2, 0, 7, 5, 6, 4])  # fixed points: 1, 2, 5, 6
        shuffled = table[perm]
        expected = np.mean(perm == np.arange(8))
        assert position_accuracy(shuffled, table) == pytest.approx(expected)
        assert expected == pytest.approx(0.5)

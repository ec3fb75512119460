import numpy as np
import pytest

from flowgate.nn.losses import (
    build_sim_matrix,
    logsumexp,
    loss_ce,
    loss_simloss,
    softmax,
)
from conftest import max_relative_error, numeric_gradient

TOL = 1e-4


def test_softmax_rows_sum_to_one_and_survive_huge_logits():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 7)) * 500.0
    p = softmax(z)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.all(np.isfinite(p))


def test_softmax_temperature_flattens():
    z = np.array([[2.0, 0.0, -1.0]])
    sharp = softmax(z, temperature=0.5)
    flat = softmax(z, temperature=5.0)
    assert sharp.max() > softmax(z).max() > flat.max()


def test_logsumexp_matches_direct_computation():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(6, 4))
    direct = np.log(np.exp(z).sum(axis=1))
    assert np.allclose(logsumexp(z), direct)
    shifted = z + 1000.0
    assert np.allclose(logsumexp(shifted), direct + 1000.0)


class TestSimMatrix:
    def test_structure(self):
        sim = build_sim_matrix(
            ["a1", "a2", "b1"],
            {"a1": "a", "a2": "a", "b1": "b"}, alpha=0.075)
        expected = np.array([
            [1.0, 0.075, 0.0],
            [0.075, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ])
        assert np.array_equal(sim, expected)

    def test_singleton_groups_give_identity(self):
        sim = build_sim_matrix(["a", "b"], {"a": "ga", "b": "gb"}, alpha=0.5)
        assert np.array_equal(sim, np.eye(2))


class TestCrossEntropy:
    def test_matches_manual_log_softmax(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(5, 4))
        y = rng.integers(0, 4, size=5)
        losses, _ = loss_ce(z, y)
        manual = -np.log(softmax(z)[np.arange(5), y])
        assert np.allclose(losses, manual)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(4, 6))
        y = rng.integers(0, 6, size=4)

        def objective():
            return float(loss_ce(z, y)[0].sum())

        _, grads = loss_ce(z, y)
        assert max_relative_error(grads, numeric_gradient(objective, z)) < TOL

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(4)
        _, grads = loss_ce(rng.normal(size=(3, 5)), np.array([0, 2, 4]))
        assert np.allclose(grads.sum(axis=1), 0.0)


class TestSimLoss:
    def _setup(self, seed=5, n=4, k=6, alpha=0.2, temperature=2.0):
        rng = np.random.default_rng(seed)
        classes = [f"c{i}" for i in range(k)]
        group_of = {c: f"g{i % 3}" for i, c in enumerate(classes)}
        sim = build_sim_matrix(classes, group_of, alpha)
        z = rng.normal(size=(n, k))
        y = rng.integers(0, k, size=n)
        return z, y, sim, temperature

    def test_reduces_to_cross_entropy_with_identity_sim(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=(5, 4))
        y = rng.integers(0, 4, size=5)
        losses, grads = loss_simloss(z, y, np.eye(4), temperature=1.0)
        ce_losses, ce_grads = loss_ce(z, y)
        assert np.allclose(losses, ce_losses)
        assert np.allclose(grads, ce_grads)

    def test_matches_direct_formula(self):
        z, y, sim, temperature = self._setup()
        losses, _ = loss_simloss(z, y, sim, temperature)
        probs = softmax(z, temperature)
        manual = -np.log((sim[y] * probs).sum(axis=1))
        assert np.allclose(losses, manual)

    def test_in_group_confusion_costs_less(self):
        classes = ["a1", "a2", "b1"]
        sim = build_sim_matrix(
            classes, {"a1": "g", "a2": "g", "b1": "h"}, alpha=0.5)
        confident_in_group = np.array([[0.0, 5.0, 0.0]])
        confident_cross = np.array([[0.0, 0.0, 5.0]])
        label = np.array([0])
        in_group, _ = loss_simloss(confident_in_group, label, sim)
        cross, _ = loss_simloss(confident_cross, label, sim)
        assert in_group[0] < cross[0]

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient_matches_finite_differences(self, seed):
        z, y, sim, temperature = self._setup(seed=seed)

        def objective():
            return float(loss_simloss(z, y, sim, temperature)[0].sum())

        _, grads = loss_simloss(z, y, sim, temperature)
        assert max_relative_error(grads, numeric_gradient(objective, z)) < TOL

import numpy as np
import pytest

from flowgate.nn.optim import AdamW, cyclic_lr


class TestAdamW:
    def test_matches_hand_rolled_recursion(self):
        rng = np.random.default_rng(0)
        shapes = [(3, 2), (4,)]
        params = [rng.normal(size=s) for s in shapes]
        expected = [p.copy() for p in params]
        optimizer = AdamW(weight_decay=0.01)
        beta1, beta2, eps, wd = 0.9, 0.999, 1e-8, 0.01
        m = [np.zeros(s) for s in shapes]
        v = [np.zeros(s) for s in shapes]
        lr = 1e-3
        for t in range(1, 6):
            grads = [rng.normal(size=s) for s in shapes]
            optimizer.step(params, grads, lr)
            for i, g in enumerate(grads):
                m[i] = beta1 * m[i] + (1 - beta1) * g
                v[i] = beta2 * v[i] + (1 - beta2) * g * g
                mhat = m[i] / (1 - beta1 ** t)
                vhat = v[i] / (1 - beta2 ** t)
                expected[i] = expected[i] * (1 - lr * wd)
                expected[i] = expected[i] - lr * mhat / (np.sqrt(vhat) + eps)
        for got, want in zip(params, expected):
            assert np.allclose(got, want, atol=1e-12)

    def test_weight_decay_is_decoupled(self):
        # With zero gradients the moments stay zero, so the only change
        # is the multiplicative decay on the weights themselves.
        param = np.array([2.0, -4.0])
        optimizer = AdamW(weight_decay=0.1)
        optimizer.step([param], [np.zeros(2)], lr=0.5)
        assert np.allclose(param, np.array([2.0, -4.0]) * (1 - 0.5 * 0.1))

    def test_updates_in_place(self):
        param = np.ones(3)
        original = param
        AdamW().step([param], [np.ones(3)], lr=0.1)
        assert original is param
        assert not np.allclose(param, 1.0)

    def test_rejects_non_finite_gradient(self):
        optimizer = AdamW()
        with pytest.raises(FloatingPointError):
            optimizer.step([np.ones(2)], [np.array([1.0, np.nan])], lr=0.1)
        # The failed call must not have advanced the step counter.
        assert optimizer.step_count == 0


class TestCyclicLr:
    def test_triangular_wave(self):
        base, peak, cycle = 1e-4, 1e-3, 100
        assert cyclic_lr(0, cycle, base, peak) == pytest.approx(base)
        assert cyclic_lr(50, cycle, base, peak) == pytest.approx(peak)
        assert cyclic_lr(100, cycle, base, peak) == pytest.approx(base)
        assert cyclic_lr(25, cycle, base, peak) == pytest.approx(
            (base + peak) / 2)
        assert cyclic_lr(75, cycle, base, peak) == pytest.approx(
            (base + peak) / 2)

    def test_wave_repeats(self):
        assert cyclic_lr(7, 40, 1e-4, 1e-3) == cyclic_lr(47, 40, 1e-4, 1e-3)

    def test_rejects_empty_cycle(self):
        with pytest.raises(ValueError):
            cyclic_lr(0, 0, 1e-4, 1e-3)

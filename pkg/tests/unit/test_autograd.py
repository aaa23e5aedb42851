"""
Tests for graph bookkeeping, no_grad and the SGD optimizer.
"""

import threading

import numpy as np
import pytest

from src.core import functional as F
from src.core.autograd import (NonFiniteError, ShapeMismatchError, Tensor, get_default_dtype, is_grad_enabled,
                               no_grad, set_default_dtype)
from src.core.optim import SGD, TrainingDivergedError, sgd_step, step_decay_lr


class TestTensor:
    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_float64_input_keeps_precision(self):
        assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64

    def test_set_default_dtype_round_trip(self):
        previous = get_default_dtype()
        try:
            set_default_dtype(np.float64)
            assert Tensor([1]).dtype == np.float64
        finally:
            set_default_dtype(previous)
        with pytest.raises(ValueError):
            set_default_dtype(np.int32)

    def test_reused_tensor_accumulates_gradient(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (x + x).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_scalar_ops(self):
        x = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        out = (3 * x + 1).sum()
        assert out.item() == pytest.approx(2.0)
        out.backward()
        np.testing.assert_array_equal(x.grad, [3.0, 3.0])

    def test_non_scalar_backward_needs_seed(self):
        with pytest.raises(ShapeMismatchError):
            Tensor(np.ones(3), requires_grad=True).backward()

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            Tensor(np.ones(2)) + Tensor(np.ones(3))

    def test_non_finite_forward_raises(self):
        with pytest.raises(NonFiniteError):
            Tensor(np.array([np.inf])) + 1.0

    def test_non_finite_gradient_raises(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(NonFiniteError):
            x.accumulate_grad(np.array([np.nan, 0.0]))

    def test_detach_drops_graph(self):
        x = Tensor(np.ones(2), requires_grad=True)
        y = (x * 2).detach()
        assert not y.requires_grad


class TestNoGrad:
    def test_no_graph_inside_block(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with no_grad():
            out = F.relu(x)
        assert not out.requires_grad
        assert is_grad_enabled()

    def test_state_is_per_thread(self):
        seen = {}

        def worker():
            seen["enabled"] = is_grad_enabled()

        with no_grad():
            thread = threading.Thread(target=worker)
            thread.start()
            thread.join()
            assert not is_grad_enabled()
        assert seen["enabled"] is True

    def test_restored_after_exception(self):
        with pytest.raises(RuntimeError):
            with no_grad():
                raise RuntimeError("boom")
        assert is_grad_enabled()


class TestSgdStep:
    def test_zero_gradient_zero_state_leaves_params(self):
        params = {"w": np.array([1.0, -2.0])}
        sgd_step(params, {"w": np.zeros(2)}, lr=0.1, momentum=0.9, weight_decay=0.0)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_one_step_on_square(self):
        params = {"theta": np.array([1.0])}
        grads = {"theta": 2 * params["theta"]}
        sgd_step(params, grads, lr=0.1, momentum=0.0, weight_decay=0.0)
        assert params["theta"][0] == pytest.approx(0.8)

    def test_momentum_trajectory_matches_recurrence(self):
        lr, mu, lam = 0.05, 0.9, 0.01
        params = {"theta": np.array([1.0])}
        velocity = {}
        theta, v = 1.0, 0.0
        for _ in range(3):
            g = 2 * params["theta"]
            sgd_step(params, {"theta": g}, lr=lr, momentum=mu, weight_decay=lam, velocity=velocity)
            v = mu * v + 2 * theta + lam * theta
            theta = theta - lr * v
            assert params["theta"][0] == pytest.approx(theta, rel=1e-12)

    def test_zero_learning_rate_is_a_no_op(self, rng):
        original = rng.standard_normal(4)
        params = {"w": original.copy()}
        sgd_step(params, {"w": rng.standard_normal(4)}, lr=0.0)
        np.testing.assert_array_equal(params["w"], original)

    def test_negative_learning_rate_rejected(self):
        with pytest.raises(ValueError):
            sgd_step({"w": np.ones(1)}, {"w": np.ones(1)}, lr=-0.1)

    def test_non_finite_gradient_rejected(self):
        with pytest.raises(TrainingDivergedError):
            sgd_step({"w": np.ones(1)}, {"w": np.array([np.nan])}, lr=0.1)

    def test_missing_gradient_counts_as_zero(self):
        params = {"w": np.ones(1)}
        sgd_step(params, {}, lr=0.1, weight_decay=0.0)
        np.testing.assert_array_equal(params["w"], [1.0])


class TestSchedule:
    def test_step_decay_sequence(self):
        rates = [step_decay_lr(epoch, 0.001, 6) for epoch in range(15)]
        assert rates[:6] == [0.001] * 6
        assert rates[6:] == pytest.approx([0.0001] * 9)

    def test_optimizer_updates_tensors(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        optimizer = SGD({"w": w}, lr=0.1, momentum=0.0, weight_decay=0.0)
        (w * 2).sum().backward()
        optimizer.step()
        assert w.data[0] == pytest.approx(0.8)
        optimizer.zero_grad()
        assert w.grad is None

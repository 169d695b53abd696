"""Gradient and invariant checks for the individual pipeline stages.

Every backward pass is compared against a central finite-difference oracle
computed here in the test, element by element, using the relative-error form
|analytic - fd| / (|analytic| + 1e-8) at epsilon 1e-5.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mclab.stages import AttentionStage, ConvStage, HeadStage, LstmStage, relu, sigmoid, softmax

EPS = 1e-5
TOL = 1e-4


def central_diff(fn, arr: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central finite differences of the scalar fn() wrt arr, in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = fn()
        flat[i] = old - eps
        fm = fn()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - fd) / (np.abs(analytic) + 1e-8)))


class TestActivations:
    def test_sigmoid_midpoint_and_limits(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5
        big = sigmoid(np.array([1000.0, -1000.0]))
        assert np.all(np.isfinite(big))
        assert big[0] == pytest.approx(1.0)
        assert big[1] == pytest.approx(0.0)

    def test_sigmoid_symmetry(self):
        z = np.linspace(-20, 20, 41)
        np.testing.assert_allclose(sigmoid(-z), 1.0 - sigmoid(z), atol=1e-12)

    def test_relu(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        np.testing.assert_array_equal(relu(x), [0.0, 0.0, 0.0, 0.5, 2.0])

    def test_softmax_uniform_for_equal_logits(self):
        np.testing.assert_allclose(softmax(np.zeros(7)), np.full(7, 1.0 / 7.0))

    def test_softmax_shift_invariance(self):
        z = np.array([1.0, -3.0, 2.5, 0.0])
        np.testing.assert_allclose(softmax(z), softmax(z + 123.0), atol=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=9))
    @settings(max_examples=200, deadline=None)
    def test_softmax_rows_are_simplex(self, logits):
        p = softmax(np.array(logits))
        assert np.all(p >= 0)
        assert float(p.sum()) == pytest.approx(1.0, abs=1e-6)


class TestConvStage:
    def test_output_shape_halves_per_block(self):
        gen = np.random.default_rng(0)
        stage = ConvStage(1, (2, 3), gen)
        out, _ = stage.forward(gen.standard_normal((2, 1, 8, 8)))
        assert out.shape == (2, 3, 2, 2)

    def test_gradients_match_finite_differences(self):
        for seed in range(10):
            gen = np.random.default_rng(seed)
            stage = ConvStage(1, (2,), gen)
            x = gen.standard_normal((2, 1, 4, 4))
            out, cache = stage.forward(x)
            r = gen.standard_normal(out.shape)

            def loss():
                return float(np.sum(stage.forward(x)[0] * r))

            dx, grads = stage.backward(r, cache)
            for name, param in stage.params():
                fd = central_diff(loss, param)
                assert max_rel_err(grads[name], fd) < TOL, f"{name} seed {seed}"
            assert max_rel_err(dx, central_diff(loss, x)) < TOL, f"dx seed {seed}"

    def test_two_block_gradients_match_finite_differences(self):
        for seed in range(3):
            gen = np.random.default_rng(100 + seed)
            stage = ConvStage(1, (2, 3), gen)
            x = gen.standard_normal((1, 1, 8, 8))
            out, cache = stage.forward(x)
            r = gen.standard_normal(out.shape)

            def loss():
                return float(np.sum(stage.forward(x)[0] * r))

            dx, grads = stage.backward(r, cache)
            for name, param in stage.params():
                fd = central_diff(loss, param)
                assert max_rel_err(grads[name], fd) < TOL, f"{name} seed {seed}"
            assert max_rel_err(dx, central_diff(loss, x)) < TOL

    def test_maxpool_tie_routes_to_first_position(self):
        # equal maxima in one window: the earliest flat index wins
        x = np.array([[[[5.0, 5.0], [3.0, 1.0]]]])
        out, arg = ConvStage._maxpool(x)
        assert out[0, 0, 0, 0] == 5.0
        assert arg[0, 0, 0, 0] == 0
        dx = ConvStage._maxpool_backward(np.ones((1, 1, 1, 1)), arg, x.shape)
        np.testing.assert_array_equal(dx[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_pool_rejects_collapsed_spatial_size(self):
        with pytest.raises(ValueError, match="too small"):
            ConvStage._maxpool(np.ones((1, 1, 1, 1)))


class TestLstmStage:
    def test_gradients_match_finite_differences(self):
        for seed in range(10):
            gen = np.random.default_rng(seed)
            stage = LstmStage(3, 4, gen)
            x = gen.standard_normal((2, 3, 3))
            out, cache = stage.forward(x)
            r = gen.standard_normal(out.shape)

            def loss():
                return float(np.sum(stage.forward(x)[0] * r))

            dx, grads = stage.backward(r, cache)
            for name, param in stage.params():
                fd = central_diff(loss, param)
                assert max_rel_err(grads[name], fd) < TOL, f"{name} seed {seed}"
            assert max_rel_err(dx, central_diff(loss, x)) < TOL, f"dx seed {seed}"

    def test_forget_gate_bias_starts_open(self):
        stage = LstmStage(3, 4, np.random.default_rng(0))
        np.testing.assert_array_equal(stage.b[4:8], np.ones(4))
        assert np.all(stage.b[:4] == 0) and np.all(stage.b[8:] == 0)

    def test_single_step_sequence_shape(self):
        gen = np.random.default_rng(1)
        stage = LstmStage(5, 6, gen)
        hs, _ = stage.forward(gen.standard_normal((3, 1, 5)))
        assert hs.shape == (3, 1, 6)

    def test_rejects_wrong_feature_size(self):
        stage = LstmStage(3, 4, np.random.default_rng(0))
        with pytest.raises(ValueError, match="feature size"):
            stage.forward(np.zeros((2, 3, 7)))


class TestAttentionStage:
    # The key bias is a gauge direction: adding a constant to every key shifts
    # each score row uniformly, and softmax is row-shift invariant, so the true
    # gradient wrt bk is identically zero. Both sides are compared to zero at
    # the finite-difference noise floor instead of by the relative-error form,
    # whose denominator breaks down at an exactly-zero gradient.
    GAUGE_FLOOR = 1e-9

    def _check(self, stage, x, seed):
        out, cache = stage.forward(x)
        gen = np.random.default_rng(seed + 10_000)
        r = gen.standard_normal(out.shape)

        def loss():
            return float(np.sum(stage.forward(x)[0] * r))

        dx, grads = stage.backward(r, cache)
        for name, param in stage.params():
            fd = central_diff(loss, param)
            if name == "attn.bk":
                assert float(np.max(np.abs(grads[name]))) < self.GAUGE_FLOOR
                assert float(np.max(np.abs(fd))) < self.GAUGE_FLOOR
            else:
                assert max_rel_err(grads[name], fd) < TOL, f"{name} seed {seed}"
        assert max_rel_err(dx, central_diff(loss, x)) < TOL, f"dx seed {seed}"

    def test_gradients_match_finite_differences(self):
        for seed in range(10):
            gen = np.random.default_rng(seed)
            stage = AttentionStage(4, 1, gen)
            self._check(stage, gen.standard_normal((2, 3, 4)), seed)

    def test_two_head_gradients_match_finite_differences(self):
        for seed in range(3):
            gen = np.random.default_rng(200 + seed)
            stage = AttentionStage(4, 2, gen)
            self._check(stage, gen.standard_normal((2, 3, 4)), seed)

    def test_attention_rows_sum_to_one(self):
        for heads in (1, 2):
            for seed in range(5):
                gen = np.random.default_rng(seed)
                stage = AttentionStage(8, heads, gen)
                _, cache = stage.forward(gen.standard_normal((3, 5, 8)))
                attn = cache[4]
                assert attn.shape == (3, heads, 5, 5)
                np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-6)

    def test_single_position_weight_is_exactly_one(self):
        gen = np.random.default_rng(3)
        stage = AttentionStage(4, 1, gen)
        _, cache = stage.forward(gen.standard_normal((2, 1, 4)))
        attn = cache[4]
        assert attn.shape == (2, 1, 1, 1)
        assert np.all(attn == 1.0)

    def test_rejects_indivisible_head_count(self):
        with pytest.raises(ValueError, match="divisible"):
            AttentionStage(6, 4, np.random.default_rng(0))


class TestHeadStage:
    def test_gradients_match_finite_differences(self):
        for seed in range(10):
            gen = np.random.default_rng(seed)
            stage = HeadStage(4, 3, gen)
            x = gen.standard_normal((3, 4))
            out, cache = stage.forward(x)
            r = gen.standard_normal(out.shape)

            def loss():
                return float(np.sum(stage.forward(x)[0] * r))

            dx, grads = stage.backward(r, cache)
            for name, param in stage.params():
                fd = central_diff(loss, param)
                assert max_rel_err(grads[name], fd) < TOL, f"{name} seed {seed}"
            assert max_rel_err(dx, central_diff(loss, x)) < TOL, f"dx seed {seed}"

    def test_gradients_with_fixed_dropout_mask(self):
        for seed in range(3):
            gen = np.random.default_rng(300 + seed)
            stage = HeadStage(4, 3, gen)
            x = gen.standard_normal((3, 4))
            # inverted-dropout mask at p = 0.5: entries are 0 or 1/(1-p)
            mask = (gen.random((3, 4)) >= 0.5) * 2.0
            out, cache = stage.forward(x, mask)
            r = gen.standard_normal(out.shape)

            def loss():
                return float(np.sum(stage.forward(x, mask)[0] * r))

            dx, grads = stage.backward(r, cache)
            for name, param in stage.params():
                fd = central_diff(loss, param)
                assert max_rel_err(grads[name], fd) < TOL, f"{name} seed {seed}"
            assert max_rel_err(dx, central_diff(loss, x)) < TOL

    def test_all_dropped_leaves_only_final_bias(self):
        gen = np.random.default_rng(4)
        stage = HeadStage(4, 3, gen)
        logits, _ = stage.forward(gen.standard_normal((2, 4)), np.zeros((2, 4)))
        np.testing.assert_allclose(logits, np.broadcast_to(stage.b2, (2, 3)), atol=1e-12)

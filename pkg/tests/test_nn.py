import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisylab.losses import cross_entropy
from noisylab.nn import (
    AdamState,
    MlpModel,
    NonFiniteGradientError,
    adam_step,
    backward,
    forward,
    load_checkpoint,
    param_distance,
    save_checkpoint,
)

from conftest import central_diff, max_rel_err


class TestForward:
    def test_zero_model_gives_uniform(self, rng):
        model = MlpModel([5, 4, 3])
        rec = forward(model, rng.normal(size=(7, 5)))
        np.testing.assert_allclose(rec.probs, 1 / 3)

    def test_large_logits_do_not_overflow(self):
        model = MlpModel([2, 3, 2])
        model.layers[-1][1][:] = [1000.0, 0.0]
        rec = forward(model, np.ones((1, 2)))
        np.testing.assert_array_equal(rec.logits, [[1000.0, 0.0]])
        assert np.all(np.isfinite(rec.probs))
        np.testing.assert_allclose(rec.probs, [[1.0, 0.0]], atol=1e-300)

    def test_logit_magnitude_1e4(self):
        model = MlpModel([1, 1, 3])
        model.layers[-1][1][:] = [-1e4, 1e4, 0.0]
        probs = forward(model, np.zeros((2, 1))).probs
        assert np.all(np.isfinite(probs))

    def test_rows_normalised(self, rng):
        model = MlpModel.initialize([6, 8, 4], seed=3)
        probs = forward(model, rng.normal(size=(20, 6)) * 5).probs
        assert np.abs(probs.sum(1) - 1).max() <= 1e-6
        assert probs.min() >= 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            forward(MlpModel([3, 2, 2]), np.zeros((1, 4)))

    def test_forward_is_pure(self, rng):
        model = MlpModel.initialize([4, 5, 3], seed=1)
        before = model.theta.copy()
        forward(model, rng.normal(size=(3, 4)))
        np.testing.assert_array_equal(model.theta, before)


class TestParameterViews:
    def test_flat_and_structured_alias(self):
        model = MlpModel([3, 4, 2])
        w1, b1 = model.layers[0]
        w1[1, 2] = 7.0
        assert model.theta[1 * 4 + 2] == 7.0
        model.theta[12] = -2.0  # first hidden bias
        assert model.layers[0][1][0] == -2.0

    def test_param_count(self):
        assert MlpModel([784, 256, 10]).num_params == 784 * 256 + 256 + 256 * 10 + 10

    def test_init_bounds_and_seeds(self):
        a = MlpModel.initialize([9, 4, 3], seed=1)
        b = MlpModel.initialize([9, 4, 3], seed=2)
        assert np.abs(a.layers[0][0]).max() <= 1 / 3
        assert np.abs(a.layers[1][0]).max() <= 1 / 2
        assert param_distance(a, b) > 0
        np.testing.assert_array_equal(a.theta, MlpModel.initialize([9, 4, 3], seed=1).theta)


class TestBackward:
    def test_zero_upstream_gives_zero_gradient(self, rng):
        model = MlpModel.initialize([4, 5, 3], seed=0)
        rec = forward(model, rng.normal(size=(6, 4)))
        np.testing.assert_array_equal(backward(model, rec, np.zeros((6, 3))), 0.0)

    def test_cross_entropy_matches_finite_differences(self, rng):
        model = MlpModel.initialize([4, 5, 3], seed=0)
        assert model.num_params <= 50
        x = rng.normal(size=(8, 4))
        y = rng.integers(0, 3, size=8)
        rec = forward(model, x)
        _, g_logits = cross_entropy(rec.logits, y)
        analytic = backward(model, rec, g_logits)

        def loss(theta):
            m = MlpModel(model.layer_dims, theta)
            return cross_entropy(forward(m, x).logits, y)[0].mean()

        numeric = central_diff(loss, model.theta, h=1e-5)
        assert max_rel_err(analytic, numeric) < 1e-4

    def test_deeper_network(self, rng):
        model = MlpModel.initialize([3, 4, 3, 2], seed=5)
        x = rng.normal(size=(5, 3))
        y = rng.integers(0, 2, size=5)
        rec = forward(model, x)
        analytic = backward(model, rec, cross_entropy(rec.logits, y)[1])
        numeric = central_diff(
            lambda t: cross_entropy(forward(MlpModel(model.layer_dims, t), x).logits, y)[0].mean(),
            model.theta)
        assert max_rel_err(analytic, numeric) < 1e-4

    def test_bitwise_deterministic(self, rng):
        model = MlpModel.initialize([4, 5, 3], seed=0)
        rec = forward(model, rng.normal(size=(6, 4)))
        g = rng.normal(size=(6, 3))
        assert backward(model, rec, g).tobytes() == backward(model, rec, g).tobytes()

    def test_shape_mismatch(self, rng):
        model = MlpModel.initialize([4, 5, 3], seed=0)
        rec = forward(model, rng.normal(size=(6, 4)))
        with pytest.raises(ValueError):
            backward(model, rec, np.zeros((5, 3)))


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        model = MlpModel.initialize([2, 2, 2], seed=0)
        state = AdamState.for_model(model)
        state.m[:] = 1.0
        state.v[:] = 1.0
        before = model.theta.copy()
        adam_step(model, state, np.zeros(model.num_params))
        # moments are decayed but the bias-corrected step is still non-zero;
        # with fresh zero moments the parameters stay put
        np.testing.assert_allclose(state.m, 0.9)
        np.testing.assert_allclose(state.v, 0.999)
        fresh = MlpModel.initialize([2, 2, 2], seed=0)
        fresh_state = AdamState.for_model(fresh)
        adam_step(fresh, fresh_state, np.zeros(fresh.num_params))
        np.testing.assert_array_equal(fresh.theta, before)
        assert fresh_state.step == 1

    def test_first_step_scalar(self):
        model = MlpModel([1, 1, 1])  # weights and biases: 4 scalars
        state = AdamState.for_model(model, lr=0.001)
        g = np.zeros(model.num_params)
        g[0] = 1.0
        adam_step(model, state, g)
        # m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        assert model.theta[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
        assert model.theta[0] == pytest.approx(-0.001, rel=1e-6)

    def test_non_finite_gradient_refused(self):
        model = MlpModel([1, 1, 1])
        state = AdamState.for_model(model)
        g = np.zeros(model.num_params)
        g[2] = np.nan
        with pytest.raises(NonFiniteGradientError):
            adam_step(model, state, g)
        assert state.step == 0
        np.testing.assert_array_equal(model.theta, 0.0)


class TestParamDistance:
    def test_identical(self):
        m = MlpModel.initialize([3, 2, 2], seed=0)
        assert param_distance(m, m.copy()) == 0.0

    def test_single_weight_offset(self):
        a = MlpModel.initialize([3, 2, 2], seed=0)
        b = a.copy()
        b.layers[1][0][0, 1] += 3.0
        assert param_distance(a, b) == pytest.approx(3.0, abs=1e-12)

    def test_double_loop_oracle(self):
        a = MlpModel.initialize([3, 4, 2], seed=1)
        b = MlpModel.initialize([3, 4, 2], seed=2)
        total = 0.0
        for (wa, ba), (wb, bb) in zip(a.layers, b.layers):
            for i in range(wa.shape[0]):
                for j in range(wa.shape[1]):
                    total += (wa[i, j] - wb[i, j]) ** 2
            for i in range(ba.shape[0]):
                total += (ba[i] - bb[i]) ** 2
        assert param_distance(a, b) == pytest.approx(math.sqrt(total), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            param_distance(MlpModel([3, 2, 2]), MlpModel([3, 3, 2]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(0, 2**31 - 1), st.integers(0, 2**31 - 1))
    def test_metric_properties(self, s1, s2, s3):
        a, b, c = (MlpModel.initialize([3, 3, 2], seed=s) for s in (s1, s2, s3))
        assert param_distance(a, b) == param_distance(b, a)
        assert param_distance(a, c) <= param_distance(a, b) + param_distance(b, c) + 1e-12


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = MlpModel.initialize([5, 4, 3], seed=9)
        save_checkpoint(m, tmp_path / "net.ckpt")
        raw = (tmp_path / "net.ckpt").read_bytes()
        header, payload = raw.split(b"\n", 1)
        assert header == f"NOISYLAB-CKPT v1 5,4,3 {m.num_params}".encode()
        assert payload == m.theta.astype("<f8").tobytes()
        back = load_checkpoint(tmp_path / "net.ckpt")
        assert back.layer_dims == [5, 4, 3]
        np.testing.assert_array_equal(back.theta, m.theta)

    def test_truncated_payload(self, tmp_path):
        m = MlpModel.initialize([2, 2, 2], seed=0)
        save_checkpoint(m, tmp_path / "net.ckpt")
        data = (tmp_path / "net.ckpt").read_bytes()
        (tmp_path / "net.ckpt").write_bytes(data[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "net.ckpt")

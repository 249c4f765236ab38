import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisylab.losses import (
    DIST_FLOOR,
    LossWeights,
    co_regularization,
    co_regularization_grads,
    compat_grad_label_logits,
    compat_grad_logits,
    compat_loss,
    cross_entropy,
    divergence,
    entropy_loss,
    kl_divergence,
    origin_grad_label_logits,
    origin_loss,
    softmax_vjp,
    total_loss,
)
from noisylab.special import one_hot, softmax

from conftest import central_diff, max_rel_err, random_simplex


class TestKL:
    def test_two_class_oracle(self):
        # 0.5 ln 2 + 0.5 ln(2/3)
        assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.14384103622589042, abs=1e-12)

    def test_self_divergence_is_zero(self, rng):
        p = random_simplex(rng, 1, 6)[0]
        assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-15)

    def test_zero_mass_in_p_contributes_nothing(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 12))
    def test_gibbs(self, seed, c):
        rng = np.random.default_rng(seed)
        p, q = random_simplex(rng, 2, c)
        assert kl_divergence(p, q) >= -1e-15

    def test_rejects_non_simplex(self):
        with pytest.raises(ValueError):
            kl_divergence([0.6, 0.6], [0.5, 0.5])
        with pytest.raises(ValueError):
            kl_divergence([1.2, -0.2], [0.5, 0.5])
        with pytest.raises(ValueError):
            kl_divergence([np.nan, 1.0], [0.5, 0.5])


class TestDivergence:
    def test_two_row_oracle(self):
        p1 = np.array([[0.5, 0.5], [0.9, 0.1]])
        p2 = np.array([[0.25, 0.75], [0.9, 0.1]])
        row0 = 0.5 * math.log(2) + 0.5 * math.log(2 / 3) + 0.25 * math.log(0.5) + 0.75 * math.log(1.5)
        assert divergence(p1, p2) == pytest.approx(row0 / 2, abs=1e-12)

    def test_symmetric_and_zero_on_identity(self, rng):
        p1 = random_simplex(rng, 9, 5)
        p2 = random_simplex(rng, 9, 5)
        assert divergence(p1, p2) == pytest.approx(divergence(p2, p1), abs=1e-14)
        assert divergence(p1, p1) == pytest.approx(0.0, abs=1e-14)
        assert divergence(p1, p2) > 0

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            divergence(random_simplex(rng, 3, 4), random_simplex(rng, 2, 4))


class TestCompat:
    def test_value_and_per_sample(self, rng):
        p = random_simplex(rng, 4, 3)
        yd = random_simplex(rng, 4, 3)
        value, per, _ = compat_loss(p, yd)
        expect = [kl_divergence(p[i], yd[i]) for i in range(4)]
        np.testing.assert_allclose(per, expect, rtol=1e-12)
        assert value == pytest.approx(np.mean(expect), rel=1e-12)

    def test_label_dist_gradient_fd(self, rng):
        p = random_simplex(rng, 3, 4)
        yd = random_simplex(rng, 3, 4)
        _, _, grad = compat_loss(p, yd)

        def f(flat):
            q = flat.reshape(yd.shape)
            return np.mean(np.sum(p * (np.log(p) - np.log(q)), axis=1))

        assert max_rel_err(grad.ravel(), central_diff(f, yd.ravel(), h=1e-7)) < 1e-6

    def test_logit_gradient_fd(self, rng):
        z = rng.normal(size=(3, 4))
        yd = random_simplex(rng, 3, 4)
        analytic = compat_grad_logits(softmax(z), yd)
        f = lambda flat: compat_loss(softmax(flat.reshape(z.shape)), yd)[0]
        assert max_rel_err(analytic.ravel(), central_diff(f, z.ravel())) < 1e-6

    def test_label_logit_closed_form_matches_chain_rule(self, rng):
        p = random_simplex(rng, 5, 4)
        yd = random_simplex(rng, 5, 4)
        chained = softmax_vjp(yd, compat_loss(p, yd)[2])
        np.testing.assert_allclose(compat_grad_label_logits(p, yd), chained, atol=1e-14)

    def test_label_logit_gradient_fd(self, rng):
        p = random_simplex(rng, 3, 4)
        ylog = rng.normal(size=(3, 4)) * 3
        analytic = compat_grad_label_logits(p, softmax(ylog))
        f = lambda flat: compat_loss(p, softmax(flat.reshape(ylog.shape)))[0]
        assert max_rel_err(analytic.ravel(), central_diff(f, ylog.ravel())) < 1e-6


class TestOrigin:
    def test_value(self):
        y = one_hot(np.array([1, 0]), 3)
        yd = np.array([[0.2, 0.5, 0.3], [0.6, 0.3, 0.1]])
        value, _ = origin_loss(y, yd)
        assert value == pytest.approx(-(math.log(0.5) + math.log(0.6)) / 2, abs=1e-14)

    def test_label_logit_gradient(self, rng):
        y = one_hot(rng.integers(0, 4, size=3), 4)
        ylog = rng.normal(size=(3, 4))
        analytic = origin_grad_label_logits(y, softmax(ylog))
        chained = softmax_vjp(softmax(ylog), origin_loss(y, softmax(ylog))[1])
        np.testing.assert_allclose(analytic, chained, atol=1e-14)
        f = lambda flat: origin_loss(y, softmax(flat.reshape(ylog.shape)))[0]
        assert max_rel_err(analytic.ravel(), central_diff(f, ylog.ravel())) < 1e-6

    def test_rejects_soft_labels(self):
        with pytest.raises(ValueError):
            origin_loss([[0.5, 0.5]], [[0.5, 0.5]])


class TestEntropy:
    def test_uniform_maximum(self):
        value, grad = entropy_loss(np.full((2, 4), 0.25))
        assert value == pytest.approx(math.log(4), abs=1e-14)
        np.testing.assert_allclose(grad, 0.0, atol=1e-15)

    def test_one_hot_is_zero(self):
        assert entropy_loss(np.eye(3))[0] == pytest.approx(0.0, abs=1e-15)

    def test_logit_gradient_fd(self, rng):
        z = rng.normal(size=(4, 5))
        analytic = entropy_loss(softmax(z))[1]
        f = lambda flat: entropy_loss(softmax(flat.reshape(z.shape)))[0]
        assert max_rel_err(analytic.ravel(), central_diff(f, z.ravel())) < 1e-6


class TestCoRegularization:
    def test_reciprocal(self):
        value, deriv = co_regularization(4.0, -1.0)
        assert value == 0.25
        assert deriv == -1.0 / 16

    def test_clamp(self):
        value, _ = co_regularization(0.0, -1.0)
        assert value == pytest.approx(1.0 / DIST_FLOOR)
        assert math.isfinite(value)

    def test_gradients_fd_at_distance_three(self, rng):
        t1 = rng.normal(size=6)
        direction = rng.normal(size=6)
        t2 = t1 + 3.0 * direction / np.linalg.norm(direction)
        value, g1, g2, clamped = co_regularization_grads(t1, t2, -1.0)
        assert value == pytest.approx(1 / 3, rel=1e-12)
        assert not clamped
        f1 = lambda t: co_regularization(np.linalg.norm(t - t2), -1.0)[0]
        f2 = lambda t: co_regularization(np.linalg.norm(t1 - t), -1.0)[0]
        assert max_rel_err(g1, central_diff(f1, t1)) < 1e-6
        assert max_rel_err(g2, central_diff(f2, t2)) < 1e-6
        np.testing.assert_array_equal(g1, -g2)

    def test_identical_parameters(self):
        t = np.ones(4)
        value, g1, g2, clamped = co_regularization_grads(t, t.copy(), -1.0)
        assert clamped
        assert math.isfinite(value)
        np.testing.assert_array_equal(g1, 0.0)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(mu=0.5)
        with pytest.raises(ValueError):
            LossWeights(alpha=-0.1)
        LossWeights(xi=0.0, mu=1.0)


class TestCrossEntropy:
    def test_value_and_gradient(self, rng):
        z = rng.normal(size=(4, 3))
        y = np.array([0, 2, 1, 1])
        per, grad = cross_entropy(z, y)
        np.testing.assert_allclose(per, -np.log(softmax(z)[np.arange(4), y]), rtol=1e-12)
        f = lambda flat: cross_entropy(flat.reshape(z.shape), y)[0].mean()
        assert max_rel_err(grad.ravel(), central_diff(f, z.ravel())) < 1e-6


class TestTotal:
    def test_recomposition(self, rng):
        p = random_simplex(rng, 6, 4)
        yd = random_simplex(rng, 6, 4)
        y = one_hot(rng.integers(0, 4, size=6), 4)
        w = LossWeights()
        br = total_loss(p, yd, y, 2.5, w)
        assert br.total == pytest.approx(br.l_c + 0.1 * br.l_o + 0.4 * br.l_e + 0.1 * br.l_d, abs=1e-10)
        assert br.l_d == pytest.approx(0.4)
        assert br.l_c == pytest.approx(br.per_sample_lc.mean(), abs=1e-15)

    def test_zero_weights_leave_only_compat(self, rng):
        p = random_simplex(rng, 3, 4)
        yd = random_simplex(rng, 3, 4)
        y = one_hot(np.array([0, 1, 2]), 4)
        br = total_loss(p, yd, y, 1.0, LossWeights(alpha=0, beta=0, xi=0))
        assert br.total == br.l_c
        assert br.l_o > 0 and br.l_e > 0

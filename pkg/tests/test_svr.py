import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from hetcd.raster import TrainingSet
from hetcd.regress.svr import (
    SvrHyper, SvrModel, quadratic_eps_loss, rbf_kernel, residual_norms, svr_cost, svr_fit,
    svr_predict,
)

from conftest import random_set


def oracle_cost(t, h, starts, seed):
    """Best cost found by L-BFGS over (beta, b) from several random starts."""
    x, y = t.inputs, t.targets
    m, q = y.shape
    k = rbf_kernel(x, x, h.kernel_width)

    def cost(z):
        beta, b = z[:m * q].reshape(m, q), z[m * q:]
        e = y - k @ beta - b
        mu = np.sqrt(np.sum(e * e, axis=1))
        return 0.5 * np.sum(beta * (k @ beta)) + h.penalty * np.sum(quadratic_eps_loss(mu, h.insensitivity))

    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(starts):
        z0 = rng.normal(scale=0.5, size=m * q + q)
        res = minimize(cost, z0, method="L-BFGS-B", options={"maxiter": 5000, "gtol": 1e-12, "ftol": 1e-15})
        best = min(best, res.fun)
    return best


class TestLoss:
    def test_inside_tube(self):
        assert quadratic_eps_loss(0.05, 0.1) == 0.0

    def test_boundary(self):
        assert quadratic_eps_loss(0.1, 0.1) == 0.0

    def test_outside(self):
        assert quadratic_eps_loss(2.0, 0.5) == 2.25


def zero_model(x, q, bias=None):
    return SvrModel(inputs=x, beta=np.zeros((len(x), q)),
                    bias=np.zeros(q) if bias is None else np.asarray(bias, float), kernel_width=1.0)


class TestResidualNorms:
    def test_perfect_fit(self):
        t = TrainingSet(np.zeros((3, 1)), np.full((3, 2), 0.5))
        np.testing.assert_array_equal(residual_norms(zero_model(t.inputs, 2, [0.5, 0.5]), t), 0.0)

    def test_scalar_residual(self):
        t = TrainingSet(np.zeros((1, 1)), np.array([[-3.0]]))
        assert residual_norms(zero_model(t.inputs, 1), t)[0] == 3.0

    def test_vector_residual(self):
        t = TrainingSet(np.zeros((1, 1)), np.array([[3.0, 4.0]]))
        assert residual_norms(zero_model(t.inputs, 2), t)[0] == 5.0


class TestCost:
    def test_zero_model_inside_tube(self):
        t = TrainingSet(np.arange(3.0)[:, None], np.full((3, 1), 0.05))
        assert svr_cost(zero_model(t.inputs, 1), t, SvrHyper(insensitivity=0.1)) == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_non_negative(self, seed):
        rng = np.random.default_rng(seed)
        t = random_set(rng, 6, 2, 2)
        model = SvrModel(inputs=t.inputs, beta=rng.normal(size=(6, 2)), bias=rng.normal(size=2),
                         kernel_width=0.7)
        assert svr_cost(model, t, SvrHyper(kernel_width=0.7)) >= 0.0

    def test_history_non_increasing(self, rng):
        for _ in range(10):
            t = random_set(rng, int(rng.integers(5, 31)), 3, 3)
            hist = np.asarray(svr_fit(t, SvrHyper(insensitivity=0.05)).cost_history)
            assert np.all(np.diff(hist) <= 0.0)


class TestFit:
    def test_large_tube_gives_zero_model(self):
        t = TrainingSet(np.arange(4.0)[:, None], np.full((4, 1), 0.01))
        model = svr_fit(t, SvrHyper(insensitivity=1.0))
        assert model.cost_history[-1] == 0.0
        np.testing.assert_array_equal(model.beta, 0.0)

    def test_single_point(self):
        # one row: the bias alone reaches the target, so the optimum is beta = 0, b = y
        t = TrainingSet(np.array([[0.3, -0.2]]), np.array([[1.0, 2.0]]))
        model = svr_fit(t)
        np.testing.assert_allclose(svr_predict(model, t.inputs[0]), [1.0, 2.0], atol=1e-12)
        assert model.cost_history[-1] == 0.0

    def test_matches_oracle(self, rng):
        h = SvrHyper(insensitivity=0.05, kernel_width=0.8)
        t = random_set(rng, 15, 2, 2)
        ours = svr_cost(svr_fit(t, h), t, h)
        assert ours <= oracle_cost(t, h, 4, seed=0) * 1.01 + 1e-12

    def test_deterministic(self, rng):
        t = random_set(rng, 20, 2, 1)
        np.testing.assert_array_equal(svr_fit(t).beta, svr_fit(t).beta)


class TestPredict:
    def test_zero_beta_returns_bias(self, rng):
        model = zero_model(rng.normal(size=(4, 2)), 3, [1.0, -2.0, 0.5])
        np.testing.assert_array_equal(model.predict(rng.normal(size=(5, 2))), np.tile([1.0, -2.0, 0.5], (5, 1)))

    def test_far_query_returns_bias(self, rng):
        t = random_set(rng, 20, 2, 2)
        model = svr_fit(t)
        np.testing.assert_allclose(svr_predict(model, np.array([1e3, 1e3])), model.bias, atol=1e-12)

    def test_support_only_prediction_matches_dense(self, rng):
        t = random_set(rng, 25, 2, 2)
        model = svr_fit(t, SvrHyper(insensitivity=0.2))
        xs = rng.normal(size=(7, 2))
        dense = rbf_kernel(xs, model.inputs, model.kernel_width) @ model.beta + model.bias
        np.testing.assert_allclose(model.predict(xs), dense, atol=1e-12)

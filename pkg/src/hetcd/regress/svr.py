"""Multi-output support vector regression with a joint residual-norm loss.

All output channels share the epsilon tube: row ``m`` is penalised by
``(||e_m|| - eps)^2`` once its residual *vector* leaves the tube. Training uses
iteratively re-weighted least squares in kernel dual form
(``W = Phi^T beta``) with a backtracking line search, so the cost never
increases between iterations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .._parallel import map_rows

logger = logging.getLogger(__name__)

JITTER = 1e-10
SUPPORT_TOL = 1e-12


class SvrError(RuntimeError):
    pass


@dataclass(frozen=True)
class SvrHyper:
    penalty: float = 1.0
    insensitivity: float = 0.1
    kernel_width: float = 1.0
    max_iterations: int = 100
    cost_tolerance: float = 1e-8

    def __post_init__(self):
        if self.penalty <= 0:
            raise ValueError("penalty C must be > 0")
        if self.insensitivity < 0:
            raise ValueError("insensitivity eps must be >= 0")
        if self.kernel_width <= 0:
            raise ValueError("kernel_width sigma must be > 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


def rbf_kernel(a, b, width):
    """``exp(-||a_i - b_j||^2 / (2 width^2))``."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    sq = np.zeros((a.shape[0], b.shape[0]))
    for p in range(a.shape[1]):
        diff = a[:, p, None] - b[None, :, p]
        sq += diff * diff
    return np.exp(-sq / (2.0 * width * width))


def quadratic_eps_loss(mu, eps):
    """Zero inside the tube, ``(mu - eps)^2`` outside. Works elementwise."""
    mu = np.asarray(mu, dtype=np.float64)
    out = np.where(mu < eps, 0.0, mu * mu - 2.0 * mu * eps + eps * eps)
    return float(out) if out.ndim == 0 else out


def _residuals(k, beta, bias, y):
    return y - k @ beta - bias


def _cost(k, beta, bias, y, h):
    e = _residuals(k, beta, bias, y)
    mu = np.sqrt(np.sum(e * e, axis=1))
    reg = 0.5 * float(np.sum(beta * (k @ beta)))
    return reg + h.penalty * float(np.sum(quadratic_eps_loss(mu, h.insensitivity)))


def _weights(mu, h):
    a = np.zeros_like(mu)
    out = mu >= h.insensitivity
    pos = out & (mu > 0)
    a[pos] = 2.0 * h.penalty * (mu[pos] - h.insensitivity) / mu[pos]
    # eps == 0 and an exact fit: the loss is mu^2, whose weight is 2C
    a[out & (mu == 0)] = 2.0 * h.penalty
    return a


def _irwls_target(k, y, a, bias):
    """Minimiser of the weighted problem for fixed weights ``a``."""
    support = np.flatnonzero(a > 0)
    beta = np.zeros_like(y)
    if support.size == 0:
        return beta, bias.copy()
    ks = k[np.ix_(support, support)]
    system = ks + np.diag(1.0 / a[support])
    system[np.diag_indices_from(system)] += JITTER
    try:
        factor = cho_factor(system, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise SvrError(
            f"weighted IRWLS system over {support.size} rows is singular; "
            "check for duplicated inputs or reduce the kernel width"
        ) from exc
    ones = np.ones(support.size)
    solved_y = cho_solve(factor, y[support], check_finite=False)
    solved_1 = cho_solve(factor, ones, check_finite=False)
    new_bias = (ones @ solved_y) / (ones @ solved_1)
    beta[support] = solved_y - np.outer(solved_1, new_bias)
    return beta, new_bias


@dataclass
class SvrModel:
    """Fitted MIMO SVR: ``f(x) = sum_m beta_m k(x, x_m) + b``."""

    inputs: np.ndarray
    beta: np.ndarray
    bias: np.ndarray
    kernel_width: float
    cost_history: list = field(default_factory=list)
    method: str = "svr"

    def __post_init__(self):
        self.support = np.any(np.abs(self.beta) >= SUPPORT_TOL, axis=1)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.beta.shape[1]

    def _predict_block(self, xs):
        sv = self.support
        if not sv.any():
            return np.tile(self.bias, (xs.shape[0], 1))
        return rbf_kernel(xs, self.inputs[sv], self.kernel_width) @ self.beta[sv] + self.bias

    def predict(self, xs, workers=None):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        if xs.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} input channels, got {xs.shape[1]}")
        return map_rows(self._predict_block, xs, workers)

    def state(self):
        return {
            "inputs": self.inputs,
            "beta": self.beta,
            "bias": self.bias,
            "kernel_width": np.array([self.kernel_width]),
            "cost_history": np.asarray(self.cost_history, dtype=np.float64),
        }

    @classmethod
    def from_state(cls, s):
        return cls(
            inputs=s["inputs"], beta=s["beta"], bias=s["bias"],
            kernel_width=float(s["kernel_width"][0]),
            cost_history=list(s["cost_history"]),
        )


def residual_norms(model: SvrModel, t) -> np.ndarray:
    """Euclidean norm of each training row's residual vector."""
    e = t.targets - model.predict(t.inputs)
    return np.sqrt(np.sum(e * e, axis=1))


def svr_cost(model: SvrModel, t, h: SvrHyper) -> float:
    """Regulariser ``0.5 tr(beta^T K beta)`` plus ``C`` times the summed tube loss.

    ``t`` must be the training set the model was fitted on, since the
    regulariser is evaluated through the kernel of ``t.inputs``.
    """
    k = rbf_kernel(t.inputs, t.inputs, model.kernel_width)
    return _cost(k, model.beta, model.bias, t.targets, h)


def svr_fit(t, h: SvrHyper = SvrHyper()) -> SvrModel:
    x, y = t.inputs, t.targets
    k = rbf_kernel(x, x, h.kernel_width)
    beta = np.zeros_like(y)
    # start from whichever constant model is cheaper: mean of the targets or zero
    candidates = [y.mean(axis=0), np.zeros(y.shape[1])]
    costs = [_cost(k, beta, b, y, h) for b in candidates]
    bias = candidates[int(np.argmin(costs))].copy()
    cost = min(costs)
    history = [cost]

    for it in range(h.max_iterations):
        if cost == 0.0:
            break
        e = _residuals(k, beta, bias, y)
        mu = np.sqrt(np.sum(e * e, axis=1))
        a = _weights(mu, h)
        target_beta, target_bias = _irwls_target(k, y, a, bias)
        d_beta = target_beta - beta
        d_bias = target_bias - bias
        step = 1.0
        accepted = False
        for _ in range(40):
            cand_beta = beta + step * d_beta
            cand_bias = bias + step * d_bias
            cand_cost = _cost(k, cand_beta, cand_bias, y, h)
            if cand_cost <= cost:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            logger.debug("SVR line search stalled at iteration %d", it)
            break
        decrease = cost - cand_cost
        if cand_cost > history[-1]:
            raise AssertionError("IRWLS cost increased")
        beta, bias, cost = cand_beta, cand_bias, cand_cost
        history.append(cost)
        if decrease <= h.cost_tolerance * max(history[-2], np.finfo(float).tiny):
            break

    if history[-1] > history[0]:
        raise AssertionError("final SVR cost exceeds the initial cost")
    logger.debug("SVR fit: %d iterations, cost %.6g -> %.6g", len(history) - 1, history[0], cost)
    return SvrModel(inputs=x.copy(), beta=beta, bias=np.asarray(bias, dtype=np.float64),
                    kernel_width=h.kernel_width, cost_history=history)


def svr_predict(model: SvrModel, x) -> np.ndarray:
    """Prediction for a single input vector."""
    return model.predict(np.asarray(x, dtype=np.float64)[None, :])[0]

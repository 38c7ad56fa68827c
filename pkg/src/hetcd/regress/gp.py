"""Zero-mean Gaussian-process regression with an RBF kernel.

Each output channel is an independent GP; all channels share one kernel.
Hyperparameters are tuned by gradient ascent on the log marginal likelihood
in log-parameter space, restarted from random points.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .._parallel import map_rows

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
# bounds on every log-parameter during ascent
_LOG_BOX = (-20.0, 20.0)


class GpError(RuntimeError):
    pass


@dataclass(frozen=True)
class GpHyper:
    """GP hyperparameters.

    ``lengthscale`` is a scalar (isotropic kernel) or one value per input
    channel (anisotropic). With ``optimize=True`` the given values are ignored
    and ``restarts`` random initializations are ascended instead; the random
    draws are isotropic or anisotropic according to ``anisotropic``.
    Restart points are log-uniform on ``init_range`` for every parameter.
    During ascent the noise is parameterized as ``noise_floor + exp(theta)``
    so it can never fall below the jitter floor.
    """

    signal_variance: float = 1.0
    lengthscale: float | tuple = 1.0
    noise_variance: float = 1e-6
    restarts: int = 1
    max_ascent_steps: int = 200
    step_tolerance: float = 1e-6
    optimize: bool = True
    anisotropic: bool = True
    optimize_noise: bool = True
    noise_floor: float = 1e-6
    init_range: tuple = (1e-2, 1e2)
    max_rows: int = 4000

    def __post_init__(self):
        if isinstance(self.lengthscale, (list, np.ndarray)):
            object.__setattr__(self, "lengthscale", tuple(float(v) for v in self.lengthscale))
        if self.signal_variance <= 0:
            raise ValueError("signal_variance must be > 0")
        if np.any(np.asarray(self.lengthscale, dtype=float) <= 0):
            raise ValueError("lengthscales must be > 0")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_ascent_steps < 0:
            raise ValueError("max_ascent_steps must be >= 0")


def _lengthscales(h: GpHyper, dim: int) -> np.ndarray:
    ls = np.asarray(h.lengthscale, dtype=np.float64).ravel()
    if ls.size == 1:
        return np.full(dim, ls[0])
    if ls.size != dim:
        raise ValueError(f"{ls.size} lengthscales for {dim} input channels")
    return ls


def _scaled_sqdist(a, b, ls):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    out = np.zeros((a.shape[0], b.shape[0]))
    for p in range(a.shape[1]):
        diff = (a[:, p, None] - b[None, :, p]) / ls[p]
        out += diff * diff
    return out


def _rbf_matrix(a, b, variance, ls):
    return variance * np.exp(-0.5 * _scaled_sqdist(a, b, ls))


def rbf(xi, xj, h: GpHyper) -> float:
    """Kernel value between two vectors."""
    xi = np.asarray(xi, dtype=np.float64).ravel()
    xj = np.asarray(xj, dtype=np.float64).ravel()
    if xi.shape != xj.shape:
        raise ValueError(f"dimension mismatch: {xi.size} vs {xj.size}")
    ls = _lengthscales(h, xi.size)
    return float(_rbf_matrix(xi[None], xj[None], h.signal_variance, ls)[0, 0])


def kernel_matrix(a, b, h: GpHyper) -> np.ndarray:
    """Cross-covariance ``K(a, b)``.

    Passing ``b=None`` builds the training matrix ``K(a, a)`` with the noise
    variance added on the diagonal.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    ls = _lengthscales(h, a.shape[1])
    if b is None:
        k = _rbf_matrix(a, a, h.signal_variance, ls)
        k[np.diag_indices_from(k)] += h.noise_variance
        return k
    return _rbf_matrix(a, b, h.signal_variance, ls)


def _chol(k):
    try:
        return cholesky(k, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise GpError(
            "kernel matrix is not positive definite; increase noise_variance "
            "(jitter) or remove duplicate training rows"
        ) from exc


def _lml_parts(x, y, variance, ls, noise, want_grad=True):
    """Log marginal likelihood summed over outputs, and its gradient w.r.t.
    (log variance, log lengthscale_1..P, noise) where the last entry is the
    derivative with respect to the noise variance itself."""
    m, q = y.shape
    kf = _rbf_matrix(x, x, variance, ls)
    k = kf.copy()
    k[np.diag_indices_from(k)] += noise
    low = _chol(k)
    alpha = cho_solve((low, True), y, check_finite=False)
    value = (
        -0.5 * float(np.sum(y * alpha))
        - q * float(np.sum(np.log(np.diag(low))))
        - 0.5 * m * q * LOG_2PI
    )
    if not want_grad:
        return value, None, (low, alpha)
    kinv = cho_solve((low, True), np.eye(m), check_finite=False)
    w = alpha @ alpha.T - q * kinv
    wk = w * kf
    grad = np.empty(1 + ls.size + 1)
    grad[0] = 0.5 * float(np.sum(wk))
    for p in range(ls.size):
        diff = (x[:, p, None] - x[None, :, p]) / ls[p]
        grad[1 + p] = 0.5 * float(np.sum(wk * (diff * diff)))
    grad[-1] = 0.5 * float(np.trace(w))
    return value, grad, (low, alpha)


def log_marginal_likelihood(h: GpHyper, t):
    """Value and gradient of the log marginal likelihood at ``h``.

    The gradient is with respect to ``log signal_variance``, then the log
    lengthscale(s) (one entry if ``h.lengthscale`` is scalar), then
    ``log noise_variance``.
    """
    x, y = t.inputs, t.targets
    ls = _lengthscales(h, x.shape[1])
    value, grad, _ = _lml_parts(x, y, h.signal_variance, ls, h.noise_variance)
    ls_grad = grad[1:-1]
    if np.ndim(h.lengthscale) == 0:
        ls_grad = np.array([ls_grad.sum()])
    noise_grad = grad[-1] * h.noise_variance
    return value, np.concatenate([[grad[0]], ls_grad, [noise_grad]])


class _Objective:
    """Log-likelihood over the packed log-parameter vector used for ascent."""

    def __init__(self, x, y, h: GpHyper, isotropic: bool):
        self.x, self.y, self.h = x, y, h
        self.isotropic = isotropic
        self.n_ls = 1 if isotropic else x.shape[1]

    def unpack(self, theta):
        variance = math.exp(theta[0])
        ls = np.exp(theta[1:1 + self.n_ls])
        if self.isotropic:
            ls = np.full(self.x.shape[1], ls[0])
        if self.h.optimize_noise:
            noise = self.h.noise_floor + math.exp(theta[-1])
        else:
            noise = self.h.noise_variance
        return variance, ls, noise

    def __call__(self, theta):
        variance, ls, noise = self.unpack(theta)
        value, grad, _ = _lml_parts(self.x, self.y, variance, ls, noise)
        g = [grad[0]]
        g.extend([grad[1:-1].sum()] if self.isotropic else grad[1:-1])
        if self.h.optimize_noise:
            g.append(grad[-1] * math.exp(theta[-1]))
        return value, np.asarray(g)


def _ascend(obj: _Objective, theta, h: GpHyper):
    """Gradient ascent with Armijo backtracking; returns (theta, value)."""
    value, grad = obj(theta)
    step = 1.0
    for _ in range(h.max_ascent_steps):
        gg = float(grad @ grad)
        if gg == 0.0:
            break
        while True:
            cand = np.clip(theta + step * grad, *_LOG_BOX)
            try:
                cand_value, cand_grad = obj(cand)
            except GpError:
                cand_value = -math.inf
            if cand_value >= value + 1e-4 * step * gg:
                break
            step *= 0.5
            if step < 1e-14:
                return theta, value
        gain = cand_value - value
        theta, value, grad = cand, cand_value, cand_grad
        step *= 2.0
        if gain < h.step_tolerance * (1.0 + abs(value)):
            break
    return theta, value


@dataclass
class GpModel:
    """Fitted GP: cached Cholesky factor and solved weights ``K^-1 Y``."""

    inputs: np.ndarray
    alpha: np.ndarray
    chol: np.ndarray
    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float
    restart_values: list = field(default_factory=list)
    log_likelihood: float = float("nan")
    method: str = "gp"

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.alpha.shape[1]

    def cross_kernel(self, xs):
        return _rbf_matrix(xs, self.inputs, self.signal_variance, self.lengthscales)

    def predict(self, xs, workers=None):
        """Posterior mean for the rows of ``xs``."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        if xs.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} input channels, got {xs.shape[1]}")
        return map_rows(lambda blk: self.cross_kernel(blk) @ self.alpha, xs, workers)

    def predict_cov(self, xs):
        """Posterior covariance of the latent function at ``xs``."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        kss = _rbf_matrix(xs, xs, self.signal_variance, self.lengthscales)
        v = solve_triangular(self.chol, self.cross_kernel(xs).T, lower=True, check_finite=False)
        cov = kss - v.T @ v
        cov = 0.5 * (cov + cov.T)
        d = np.diag_indices_from(cov)
        cov[d] = np.where(cov[d] < 0.0, 0.0, cov[d])
        return cov

    def hyper(self) -> GpHyper:
        ls = self.lengthscales
        return GpHyper(
            signal_variance=self.signal_variance,
            lengthscale=tuple(ls) if ls.size > 1 else float(ls[0]),
            noise_variance=self.noise_variance,
            optimize=False,
        )

    def state(self):
        return {
            "inputs": self.inputs,
            "alpha": self.alpha,
            "chol": self.chol,
            "lengthscales": self.lengthscales,
            "scalars": np.array([self.signal_variance, self.noise_variance, self.log_likelihood]),
            "restart_values": np.asarray(self.restart_values, dtype=np.float64),
        }

    @classmethod
    def from_state(cls, s):
        variance, noise, ll = s["scalars"]
        return cls(
            inputs=s["inputs"], alpha=s["alpha"], chol=s["chol"],
            signal_variance=float(variance), lengthscales=s["lengthscales"],
            noise_variance=float(noise), restart_values=list(s["restart_values"]),
            log_likelihood=float(ll),
        )


def _finalize(x, y, variance, ls, noise, restart_values, ll):
    value, _, (low, alpha) = _lml_parts(x, y, variance, ls, noise, want_grad=False)
    return GpModel(
        inputs=x.copy(), alpha=alpha, chol=low, signal_variance=variance,
        lengthscales=np.asarray(ls, dtype=np.float64), noise_variance=noise,
        restart_values=restart_values, log_likelihood=value,
    )


def gp_fit(t, h: GpHyper = GpHyper(), seed: int = 0) -> GpModel:
    """Fit a GP to a training set, tuning hyperparameters if ``h.optimize``."""
    x, y = t.inputs, t.targets
    m, p = x.shape
    if m > h.max_rows:
        raise GpError(
            f"{m} training rows exceed the exact-GP cap of {h.max_rows}; "
            "subsample the training set first"
        )
    if not h.optimize:
        return _finalize(x, y, h.signal_variance, _lengthscales(h, p), h.noise_variance, [], None)

    if m == 1 and h.optimize_noise:
        # one observation cannot separate noise from signal; keep the given noise
        h = replace(h, optimize_noise=False)
    isotropic = not h.anisotropic
    obj = _Objective(x, y, h, isotropic)
    n_params = 1 + obj.n_ls + (1 if h.optimize_noise else 0)
    lo, hi = (math.log(v) for v in h.init_range)
    rng = np.random.default_rng(seed)
    best = None
    restart_values = []
    for r in range(h.restarts):
        theta0 = rng.uniform(lo, hi, size=n_params)
        try:
            theta, value = _ascend(obj, theta0, h)
        except GpError:
            logger.debug("GP restart %d started at a non-PD point", r)
            restart_values.append(-math.inf)
            continue
        restart_values.append(value)
        logger.debug("GP restart %d: log-likelihood %.6g", r, value)
        if best is None or value > best[1]:
            best = (theta, value)
    if best is None:
        raise GpError(
            f"all {h.restarts} restarts hit a non-positive-definite kernel matrix; "
            "raise noise_floor"
        )
    variance, ls, noise = obj.unpack(best[0])
    return _finalize(x, y, variance, ls, noise, restart_values, best[1])

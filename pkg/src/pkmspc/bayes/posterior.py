"""Log-Gaussian priors on log-parameters and the resulting log-posterior."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..calibration import fd_gradient
from ..errors import InputError

DEFAULT_PRIOR_SD = 0.5
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorSpec:
    """Independent Gaussian priors on each log-parameter."""

    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        means = np.atleast_1d(np.asarray(self.means, dtype=float))
        sds = np.atleast_1d(np.asarray(self.sds, dtype=float))
        if sds.size == 1 and means.size > 1:
            sds = np.full(means.size, float(sds[0]))
        if means.ndim != 1 or means.shape != sds.shape:
            raise InputError("prior means and sds must be vectors of equal length")
        if not np.all(np.isfinite(means)) or not np.all((sds > 0) & np.isfinite(sds)):
            raise InputError("prior means must be finite and sds positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sds", sds)

    @classmethod
    def centered_at(cls, theta_hat, sd=DEFAULT_PRIOR_SD) -> PriorSpec:
        theta_hat = np.asarray(theta_hat, dtype=float)
        return cls(theta_hat, np.broadcast_to(np.asarray(sd, dtype=float), theta_hat.shape))

    @property
    def dim(self) -> int:
        return self.means.size

    def log_density(self, theta) -> float:
        z = (np.asarray(theta, dtype=float) - self.means) / self.sds
        return float(-0.5 * z @ z - np.sum(np.log(self.sds)) - 0.5 * self.dim * _LOG_2PI)

    def grad(self, theta) -> np.ndarray:
        return -(np.asarray(theta, dtype=float) - self.means) / self.sds**2


@dataclass(frozen=True)
class LogPosterior:
    """Prior plus log-likelihood; any failure of the likelihood evaluates to -inf.

    ``likelihood`` is any callable on the log-parameter vector, typically a
    :class:`~pkmspc.calibration.CalibrationObjective` built on observed or
    pseudo labels. ``likelihood_grad`` optionally supplies an analytic gradient;
    otherwise gradients use central differences with ``fd_step``.
    """

    prior: PriorSpec
    likelihood: Callable[[np.ndarray], float]
    likelihood_grad: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float = 1e-5

    @property
    def dim(self) -> int:
        return self.prior.dim

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise InputError(f"expected {self.dim} log-parameters, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            return -math.inf
        try:
            ll = float(self.likelihood(theta))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError, RuntimeError):
            return -math.inf
        if not math.isfinite(ll):
            return -math.inf
        return self.prior.log_density(theta) + ll

    def grad(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.likelihood_grad is not None:
            try:
                return self.prior.grad(theta) + np.asarray(self.likelihood_grad(theta), dtype=float)
            except (ArithmeticError, ValueError, np.linalg.LinAlgError, RuntimeError):
                return np.full(self.dim, np.nan)
        return fd_gradient(self, theta, self.fd_step)


def log_posterior(lp: LogPosterior, theta_log) -> float:
    return lp(theta_log)


def value_and_grad(target, theta):
    """Evaluate a target and its gradient; plain callables fall back to central differences."""
    value = float(target(theta))
    grad_fn = getattr(target, "grad", None)
    g = grad_fn(theta) if grad_fn is not None else fd_gradient(target, theta)
    return value, np.asarray(g, dtype=float)


class GaussianTarget:
    """Multivariate normal log-density with analytic gradient, for sampler checks."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.prec = np.linalg.inv(self.cov)
        self._norm = -0.5 * (self.mean.size * _LOG_2PI + np.linalg.slogdet(self.cov)[1])

    @property
    def dim(self) -> int:
        return self.mean.size

    def __call__(self, theta) -> float:
        d = np.asarray(theta, dtype=float) - self.mean
        return float(self._norm - 0.5 * d @ self.prec @ d)

    def grad(self, theta) -> np.ndarray:
        return -self.prec @ (np.asarray(theta, dtype=float) - self.mean)

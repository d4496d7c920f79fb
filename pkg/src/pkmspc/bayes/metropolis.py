"""Adaptive Metropolis and its delayed-rejection extension."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .chain import Chain, Sampler, default_burn_in

ADAPT_SCALE = 2.38**2


@dataclass(frozen=True)
class MetropolisConfig:
    n_draws: int = 5000
    init_cov_scale: float = 0.1
    adapt_start: int = 200
    epsilon_reg: float = 1e-6
    stage2_scale: float = 0.2
    seed: int = 0
    burn_in: int | None = None

    def __post_init__(self):
        if self.n_draws < 1 or self.adapt_start < 2:
            raise InputError("n_draws must be >= 1 and adapt_start >= 2")
        if self.init_cov_scale <= 0 or self.epsilon_reg < 0 or self.stage2_scale <= 0:
            raise InputError("proposal scales must be positive")


class _RunningCov:
    """Welford accumulator for the empirical covariance of the chain history."""

    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))

    def push(self, x):
        self.n += 1
        d = x - self.mean
        self.mean = self.mean + d / self.n
        self.m2 = self.m2 + np.outer(d, x - self.mean)

    def cov(self):
        return self.m2 / (self.n - 1)


def _log1mexp(a):
    """log(1 - exp(a)) for a <= 0."""
    if a == -math.inf:
        return 0.0
    if a >= 0.0:
        return -math.inf
    return math.log(-math.expm1(a)) if a > -0.693 else math.log1p(-math.exp(a))


def _gauss_kernel(L, a, b):
    w = np.linalg.solve(L, b - a) if L.ndim == 2 else (b - a) / L
    return -0.5 * float(w @ w)


def _metropolis(lp, init, cfg: MetropolisConfig, delayed: bool) -> Chain:
    x = np.array(init, dtype=float, copy=True).ravel()
    m = x.size
    lx = float(lp(x))
    if not math.isfinite(lx):
        raise InputError("log-posterior at the initial point is not finite")
    rng = np.random.default_rng(cfg.seed)
    M = cfg.n_draws
    draws = np.empty((M, m))
    logp = np.empty(M)
    draws[0], logp[0] = x, lx
    hist = _RunningCov(m)
    hist.push(x)
    base = cfg.init_cov_scale**2 * np.eye(m)
    accepted = stage2 = 0
    for i in range(1, M):
        C = base
        if hist.n >= cfg.adapt_start:
            C = ADAPT_SCALE / m * hist.cov() + cfg.epsilon_reg * np.eye(m)
        L = np.linalg.cholesky(C)
        z = rng.standard_normal(m)
        u = rng.random()
        y1 = x + L @ z
        l1 = float(lp(y1))
        log_a1 = min(0.0, l1 - lx) if math.isfinite(l1) else -math.inf
        if u < math.exp(log_a1):
            x, lx = y1, l1
            accepted += 1
        elif delayed:
            z2 = rng.standard_normal(m)
            u2 = rng.random()
            y2 = x + cfg.stage2_scale * (L @ z2)
            l2 = float(lp(y2))
            if math.isfinite(l2):
                log_a1_rev = min(0.0, l1 - l2) if math.isfinite(l1) else -math.inf
                num = l2 + _gauss_kernel(L, y2, y1) + _log1mexp(log_a1_rev)
                den = lx + _gauss_kernel(L, x, y1) + _log1mexp(log_a1)
                log_a2 = min(0.0, num - den) if num > -math.inf else -math.inf
                if u2 < math.exp(log_a2):
                    x, lx = y2, l2
                    accepted += 1
                    stage2 += 1
        draws[i], logp[i] = x, lx
        hist.push(x)
    sampler = Sampler.DRAM if delayed else Sampler.AM
    burn = cfg.burn_in if cfg.burn_in is not None else default_burn_in(sampler, M)
    names = tuple(getattr(lp, "param_names", ()) or ())
    return Chain(draws, logp, accepted / max(M - 1, 1), sampler, cfg.seed, burn, names,
                 {"stage2_accepts": stage2, "final_proposal_cov": C.tolist() if M > 1 else None})


def sample_am(lp, init, config: MetropolisConfig = MetropolisConfig()) -> Chain:
    """Random-walk Metropolis with a proposal covariance learned from the chain history.

    Draw 0 is ``init``. Each iteration consumes one Gaussian vector and one
    uniform, in that order.
    """
    return _metropolis(lp, init, config, delayed=False)


def sample_dram(lp, init, config: MetropolisConfig = MetropolisConfig()) -> Chain:
    """Adaptive Metropolis with a second, narrower try after each first-stage rejection.

    The second stage is accepted with the two-stage delayed-rejection
    probability, which keeps the chain reversible. While first stages keep
    accepting, the random stream and trajectory match :func:`sample_am`.
    """
    return _metropolis(lp, init, config, delayed=True)

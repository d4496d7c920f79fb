"""Effective sample size and simple convergence checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .chain import Chain

ANTITHETIC_TAU = 0.5


@dataclass(frozen=True)
class EssReport:
    ess: np.ndarray
    iact: np.ndarray
    degenerate: np.ndarray
    n: int

    @property
    def min_ess(self) -> float:
        return float(self.ess.min())


def autocorrelation(x, max_lag=None) -> np.ndarray:
    """Normalized autocorrelation via FFT (biased autocovariance, lag 0 equals 1)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    d = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return np.full(n if max_lag is None else max_lag + 1, np.nan)
    rho = acov / acov[0]
    return rho if max_lag is None else rho[: max_lag + 1]


def integrated_autocorrelation_time(x) -> float:
    """Geyer initial positive sequence estimate of 1 + 2 * sum of autocorrelations."""
    rho = autocorrelation(x)
    if np.isnan(rho[0]):
        return math.nan
    n = rho.size
    tau = -1.0
    for k in range(0, n - 1, 2):
        gamma = rho[k] + rho[k + 1]
        if gamma < 0:
            break
        tau += 2.0 * gamma
    return float(tau)


def ess(chain, burn_in=None) -> EssReport:
    """Per-parameter ESS of the post-burn-in draws, capped at their count.

    ``chain`` is a :class:`Chain` or an (N, m) / (N,) array. A constant
    column reports ESS 1; an autocorrelation time below 0.5 (strongly
    antithetic, such as a chain alternating between two values) reports the
    cap. Both are flagged.
    """
    if isinstance(chain, Chain):
        draws = chain.draws[chain.burn_in if burn_in is None else burn_in:]
    else:
        draws = np.asarray(chain, dtype=float)
        if draws.ndim == 1:
            draws = draws[:, None]
        draws = draws[burn_in or 0:]
    N = draws.shape[0]
    if N < 100:
        raise InputError(f"ESS needs at least 100 post-burn-in draws, got {N}")
    m = draws.shape[1]
    out, taus, flags = np.empty(m), np.empty(m), np.zeros(m, dtype=bool)
    for j in range(m):
        tau = integrated_autocorrelation_time(draws[:, j])
        taus[j] = tau
        if math.isnan(tau):
            out[j], flags[j] = 1.0, True
        elif tau < ANTITHETIC_TAU:
            out[j], flags[j] = float(N), True
        else:
            out[j] = min(N / tau, float(N))
    return EssReport(out, taus, flags, N)


@dataclass(frozen=True)
class Diagnostics:
    stationary: np.ndarray
    split_means: np.ndarray
    split_z: np.ndarray
    autocorr: np.ndarray
    lags: np.ndarray

    @property
    def stable(self) -> bool:
        return bool(np.all(self.stationary))


def diagnostics(chain, burn_in=None, max_lag=50, threshold=3.0) -> Diagnostics:
    """Split-half mean comparison and lag-k autocorrelation table.

    A parameter is flagged non-stationary when its two half-chain means differ
    by more than ``threshold`` pooled standard errors, each half's error using
    its own ESS.
    """
    if isinstance(chain, Chain):
        draws = chain.draws[chain.burn_in if burn_in is None else burn_in:]
    else:
        draws = np.asarray(chain, dtype=float)
        draws = (draws[:, None] if draws.ndim == 1 else draws)[burn_in or 0:]
    N, m = draws.shape
    if N < 200:
        raise InputError(f"diagnostics need at least 200 post-burn-in draws, got {N}")
    h = N // 2
    a, b = draws[:h], draws[N - h:]
    ea, eb = ess(a).ess, ess(b).ess
    means = np.vstack([a.mean(axis=0), b.mean(axis=0)])
    se = np.sqrt(a.var(axis=0, ddof=1) / ea + b.var(axis=0, ddof=1) / eb)
    diff = np.abs(means[0] - means[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, np.where(diff > 0, np.inf, 0.0))
    lag = min(max_lag, N - 1)
    acf = np.column_stack([autocorrelation(draws[:, j], lag) for j in range(m)])
    return Diagnostics(z <= threshold, means, z, acf, np.arange(lag + 1))

"""Propagation of posterior parameter draws through K-PCA monitoring.

Every retained draw gets its own model, its own healthy-data control limits
and its own statistics on the monitored samples. Summaries sort values across
draws before reducing, so they do not depend on draw order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateModelError, InputError, PropagationError
from .kernels import KernelParams, KernelSpec
from .kpca import (
    ControlLimits,
    MonitoringStatistics,
    control_limits,
    fit_kpca,
    monitor,
    spe_contributions,
    t2_contributions,
)

logger = logging.getLogger(__name__)

MAX_SKIP_FRACTION = 0.2
DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class DeterministicChart:
    params: KernelParams
    stats: MonitoringStatistics
    limits: ControlLimits
    contrib_t2: dict = field(default_factory=dict)
    contrib_spe: dict = field(default_factory=dict)

    def alarms(self, kind) -> np.ndarray:
        if kind == "t2":
            return self.stats.t2 > self.limits.t2_limit
        return self.stats.spe > self.limits.spe_limit


def deterministic_chart(spec: KernelSpec, params: KernelParams, X_healthy, X_monitor,
                        r_policy=None, confidence=0.99, contribution_times=()) -> DeterministicChart:
    """Fit once at ``params``, set limits on healthy data, score the monitored samples."""
    X_healthy = np.asarray(X_healthy, dtype=float)
    X_monitor = np.asarray(X_monitor, dtype=float)
    model = fit_kpca(X_healthy, spec, params, r_policy)
    limits = control_limits(monitor(model, X_healthy), confidence)
    stats = monitor(model, X_monitor)
    ct2, cspe = {}, {}
    for t in contribution_times:
        ct2[int(t)] = t2_contributions(model, X_monitor[int(t)])
        cspe[int(t)] = spe_contributions(model, X_monitor[int(t)])
    return DeterministicChart(params, stats, limits, ct2, cspe)


@dataclass(frozen=True)
class DrawStatistics:
    """Per-draw statistics; rows follow the retained draws in supplied order."""

    theta: np.ndarray
    t2: np.ndarray
    spe: np.ndarray
    t2_limit: np.ndarray
    spe_limit: np.ndarray
    contrib_t2: dict
    contrib_spe: dict
    n_supplied: int
    skipped: tuple
    confidence: float

    @property
    def n_draws(self) -> int:
        return self.theta.shape[0]

    @property
    def n_skipped(self) -> int:
        return len(self.skipped)


def _draw_matrix(draws) -> np.ndarray:
    kept = draws.kept() if hasattr(draws, "kept") else draws
    theta = np.atleast_2d(np.asarray(kept, dtype=float))
    if theta.shape[0] < 1:
        raise InputError("propagation needs at least one retained draw")
    return theta


def propagate(draws, X_healthy, X_monitor, r_policy, spec: KernelSpec, confidence=0.99,
              contribution_times=(), workers=1) -> DrawStatistics:
    """Per-draw K-PCA fit, healthy limits and monitoring statistics.

    ``draws`` is a :class:`~pkmspc.bayes.Chain` (post-burn-in draws are used)
    or an (M, m) array of log-parameter vectors. Draws whose Gram matrix is
    degenerate are skipped; more than 20% skipped raises
    :class:`PropagationError`. ``workers`` > 1 fans draws out over threads;
    results are identical to the sequential run.
    """
    theta = _draw_matrix(draws)
    if theta.shape[1] != spec.n_params:
        raise InputError(f"draws have {theta.shape[1]} columns, kernel expects {spec.n_params}")
    X_healthy = np.asarray(X_healthy, dtype=float)
    X_monitor = np.asarray(X_monitor, dtype=float)
    times = tuple(int(t) for t in contribution_times)
    for t in times:
        if not 0 <= t < X_monitor.shape[0]:
            raise InputError(f"contribution time {t} is outside the monitored range")

    def one(row):
        try:
            params = KernelParams.from_vector(row, spec.n_lengthscales)
            return deterministic_chart(spec, params, X_healthy, X_monitor, r_policy, confidence, times)
        except DegenerateModelError as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, theta))
    else:
        results = [one(row) for row in theta]

    keep = [i for i, r in enumerate(results) if isinstance(r, DeterministicChart)]
    skipped = tuple(i for i in range(len(results)) if i not in set(keep))
    if len(skipped) > MAX_SKIP_FRACTION * theta.shape[0]:
        raise PropagationError(
            f"{len(skipped)} of {theta.shape[0]} draws gave degenerate models (limit 20%)")
    if skipped:
        logger.warning("skipped %d degenerate draws", len(skipped))
    charts = [results[i] for i in keep]
    return DrawStatistics(
        theta=theta[keep],
        t2=np.vstack([c.stats.t2 for c in charts]),
        spe=np.vstack([c.stats.spe for c in charts]),
        t2_limit=np.array([c.limits.t2_limit for c in charts]),
        spe_limit=np.array([c.limits.spe_limit for c in charts]),
        contrib_t2={t: np.vstack([c.contrib_t2[t] for c in charts]) for t in times},
        contrib_spe={t: np.vstack([c.contrib_spe[t] for c in charts]) for t in times},
        n_supplied=theta.shape[0],
        skipped=skipped,
        confidence=confidence,
    )


def _band(values, alpha):
    """Mean, median and equal-tailed bounds over axis 0, order-independent."""
    v = np.sort(np.atleast_2d(values), axis=0)
    mean = v.mean(axis=0)
    lower, median, upper = np.quantile(v, [alpha / 2, 0.5, 1 - alpha / 2], axis=0)
    lower = np.minimum(lower, median)
    upper = np.maximum(upper, median)
    return mean, median, lower, upper


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise InputError(f"credible level alpha must lie in (0, 1), got {alpha}")


@dataclass(frozen=True)
class ProbabilisticChart:
    kind: str
    alpha: float
    mean: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    limit_mean: float
    limit_lower: float
    limit_upper: float

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def columns(self, time=None) -> dict:
        n = self.mean.size
        time = np.arange(n) if time is None else np.asarray(time)
        full = np.full(n, 1.0)
        return {
            "time": time, "mean": self.mean, "median": self.median, "lower": self.lower,
            "upper": self.upper, "limit_mean": self.limit_mean * full,
            "limit_lower": self.limit_lower * full, "limit_upper": self.limit_upper * full,
        }


def summarize_chart(stats: DrawStatistics, kind: str, alpha=DEFAULT_ALPHA) -> ProbabilisticChart:
    """Posterior summary of one chart: per-sample band and the limit band."""
    _check_alpha(alpha)
    if kind not in ("t2", "spe"):
        raise InputError(f"chart kind must be 't2' or 'spe', got {kind!r}")
    values = stats.t2 if kind == "t2" else stats.spe
    limits = stats.t2_limit if kind == "t2" else stats.spe_limit
    mean, median, lower, upper = _band(values, alpha)
    lm, _, ll, lu = _band(limits[:, None], alpha)
    return ProbabilisticChart(kind, alpha, mean, median, lower, upper, float(lm[0]), float(ll[0]), float(lu[0]))


def chart_from_deterministic(chart: DeterministicChart, kind: str, alpha=DEFAULT_ALPHA) -> ProbabilisticChart:
    """Zero-width chart for a single parameter value, in the probabilistic layout."""
    values = chart.stats.t2 if kind == "t2" else chart.stats.spe
    limit = chart.limits.t2_limit if kind == "t2" else chart.limits.spe_limit
    return ProbabilisticChart(kind, alpha, values, values, values, values, limit, limit, limit)


@dataclass(frozen=True)
class ContributionBand:
    timestamp: int
    kind: str
    alpha: float
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ranking: np.ndarray
    names: tuple

    def rows(self):
        """(name, mean, lower, upper) in ranked order."""
        return [(self.names[j], self.mean[j], self.lower[j], self.upper[j]) for j in self.ranking]


def summarize_contributions(stats: DrawStatistics, timestamp, kind, alpha=DEFAULT_ALPHA,
                            names=None) -> ContributionBand:
    """Per-variable posterior mean and credible interval, ranked by |mean| (ties by index)."""
    _check_alpha(alpha)
    table = stats.contrib_t2 if kind == "t2" else stats.contrib_spe
    timestamp = int(timestamp)
    if timestamp not in table:
        raise InputError(f"contributions were not computed at time {timestamp}")
    mean, _, lower, upper = _band(table[timestamp], alpha)
    p = mean.size
    names = tuple(names) if names is not None else tuple(f"x{j + 1}" for j in range(p))
    ranking = np.lexsort((np.arange(p), -np.abs(mean)))
    return ContributionBand(timestamp, kind, alpha, mean, lower, upper, ranking, names)


def posterior_mean_theta(draws) -> np.ndarray:
    """Mean of the retained draws in log-parameter space (order-independent)."""
    return np.sort(_draw_matrix(draws), axis=0).mean(axis=0)


def posterior_mean_chart(draws, X_healthy, X_monitor, r_policy, spec: KernelSpec,
                         confidence=0.99, contribution_times=()) -> DeterministicChart:
    theta_bar = posterior_mean_theta(draws)
    params = KernelParams.from_vector(theta_bar, spec.n_lengthscales)
    return deterministic_chart(spec, params, X_healthy, X_monitor, r_policy, confidence, contribution_times)


def default_contribution_time(alarms, offset=0) -> int | None:
    """First alarm index plus ``offset``, clipped to the series; None without alarms."""
    hits = np.flatnonzero(np.asarray(alarms, dtype=bool))
    if hits.size == 0:
        return None
    return int(min(hits[0] + offset, len(alarms) - 1))

"""Detection metrics for alarm sequences against ground-truth labels."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InputError, UndefinedRateError


def _binary(v, name):
    a = np.asarray(v)
    if a.ndim != 1:
        raise InputError(f"{name} must be a vector")
    if not np.all((a == 0) | (a == 1)):
        raise InputError(f"{name} must be binary")
    return a.astype(bool)


def _pair(alarms, labels):
    a, y = _binary(alarms, "alarms"), _binary(labels, "labels")
    if a.size != y.size:
        raise InputError(f"alarms ({a.size}) and labels ({y.size}) differ in length")
    return a, y


def far_fdr(alarms, labels) -> tuple[float, float]:
    """False alarm rate on healthy samples and detection rate on faulty ones."""
    a, y = _pair(alarms, labels)
    if y.all() or not y.any():
        raise UndefinedRateError("FAR and FDR need both healthy and faulty labels")
    return float(a[~y].mean()), float(a[y].mean())


def composite_indicator(far_t2, fdr_t2, far_spe, fdr_spe) -> float:
    """Average over the two charts of ((1 - FAR) + FDR) / 2."""
    rates = np.array([far_t2, fdr_t2, far_spe, fdr_spe], dtype=float)
    if np.any((rates < 0) | (rates > 1)) or not np.all(np.isfinite(rates)):
        raise InputError("rates must lie in [0, 1]")
    return float(((1 - far_t2 + fdr_t2) / 2 + (1 - far_spe + fdr_spe) / 2) / 2)


def auc(scores, labels) -> float:
    """Rank-based ROC area; tied scores count one half."""
    s = np.asarray(scores, dtype=float).ravel()
    y = _binary(labels, "labels")
    if s.size != y.size:
        raise InputError("scores and labels differ in length")
    n1, n0 = int(y.sum()), int((~y).sum())
    if n1 == 0 or n0 == 0:
        raise UndefinedRateError("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def f1(alarms, labels) -> float:
    a, y = _pair(alarms, labels)
    tp = int(np.sum(a & y))
    fp = int(np.sum(a & ~y))
    fn = int(np.sum(~a & y))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MetricsReport:
    far_t2: float
    fdr_t2: float
    far_spe: float
    fdr_spe: float
    ci: float
    auc: float
    auc_t2: float
    auc_spe: float
    f1: float

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate_charts(t2, spe, t2_limit, spe_limit, labels, auc_chart="max") -> MetricsReport:
    """Metrics for one chart pair: a sample alarms on a chart when its statistic exceeds the limit.

    F1 uses the combined alarm (either chart). ``auc_chart`` picks the reported
    AUC: "t2", "spe" or "max" over the two.
    """
    t2, spe = np.asarray(t2, dtype=float), np.asarray(spe, dtype=float)
    a_t2, a_spe = t2 > t2_limit, spe > spe_limit
    far_t, fdr_t = far_fdr(a_t2.astype(int), labels)
    far_s, fdr_s = far_fdr(a_spe.astype(int), labels)
    auc_t, auc_s = auc(t2, labels), auc(spe, labels)
    chosen = {"t2": auc_t, "spe": auc_s, "max": max(auc_t, auc_s)}
    if auc_chart not in chosen:
        raise InputError(f"auc_chart must be one of {sorted(chosen)}")
    return MetricsReport(
        far_t, fdr_t, far_s, fdr_s, composite_indicator(far_t, fdr_t, far_s, fdr_s),
        chosen[auc_chart], auc_t, auc_s, f1((a_t2 | a_spe).astype(int), labels),
    )

"""Lengthscale selection from healthy data only, and chart-induced pseudo-labels.

Ten rules pick a single SE lengthscale (signal sd fixed at 1, noise sd at 0.1).
M1 and M2 are closed-form distance statistics, M3 solves for a target mean
similarity, and M4-M10 search a log-spaced grid anchored at the M1 value.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.spatial.distance import cdist, pdist

from .errors import DegenerateModelError, InputError, TuningError
from .kernels import KernelParams, KernelSpec, center_train_gram, cross_gram, gram_matrix
from .kpca import (
    ComponentPolicy,
    ControlLimits,
    KpcaModel,
    control_limits,
    fit_kpca,
    monitor,
    score,
)

logger = logging.getLogger(__name__)

SIGNAL_SD = 1.0
NOISE_SD = 0.1


class MethodId(str, enum.Enum):
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    M5 = "M5"
    M6 = "M6"
    M7 = "M7"
    M8 = "M8"
    M9 = "M9"
    M10 = "M10"


@dataclass(frozen=True)
class UnsupervisedMethod:
    id: MethodId
    knn: int | None = None
    target_similarity: float = 0.5
    target_rank: float | None = None
    n_components: int = 3
    n_splits: int = 20
    n_bootstrap: int = 20
    nu: float = 0.05
    n_resamples: int = 10
    n_folds: int = 5
    ridge: float = 1e-3
    confidence: float = 0.99
    grid: tuple | None = None
    grid_size: int = 40
    seed: int = 0

    def __post_init__(self):
        mid = self.id.value if isinstance(self.id, MethodId) else str(self.id).upper()
        object.__setattr__(self, "id", MethodId(mid))
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=float)
            if np.any(g <= 0) or np.any(np.diff(g) <= 0):
                raise InputError("candidate lengthscales must be positive and strictly ascending")
            object.__setattr__(self, "grid", tuple(g))
        if not 0 < self.target_similarity < 1 or not 0 < self.nu < 1:
            raise InputError("target similarity and nu must lie in (0, 1)")


@dataclass(frozen=True)
class TuningResult:
    method: MethodId
    lengthscale: float
    grid: np.ndarray = field(default_factory=lambda: np.empty(0))
    criterion: np.ndarray = field(default_factory=lambda: np.empty(0))

    def params(self) -> KernelParams:
        return KernelParams.from_natural([self.lengthscale], SIGNAL_SD, NOISE_SD)


def _params(ell) -> KernelParams:
    return KernelParams.from_natural([ell], SIGNAL_SD, NOISE_SD)


def knn_k(n: int) -> int:
    return max(5, math.ceil(0.05 * n))


def median_pairwise_distance(X) -> float:
    """Median of all n(n-1)/2 Euclidean distances."""
    return float(np.median(pdist(np.asarray(X, dtype=float))))


def median_knn_distance(X, k=None) -> float:
    """Median over samples of the distance to the k-th nearest other sample."""
    X = np.asarray(X, dtype=float)
    k = knn_k(X.shape[0]) if k is None else k
    if not 1 <= k < X.shape[0]:
        raise InputError(f"k={k} is invalid for {X.shape[0]} samples")
    D = cdist(X, X)
    np.fill_diagonal(D, np.inf)
    kth = np.sort(D, axis=1)[:, k - 1]
    return float(np.median(kth))


def default_grid(X, size=40) -> np.ndarray:
    m1 = median_pairwise_distance(X)
    return m1 * np.logspace(-1.0, 1.0, size)


def mean_offdiag_similarity(X, ell) -> float:
    X = np.asarray(X, dtype=float)
    K = gram_matrix(KernelSpec("se", X.shape[1]), _params(ell), X)
    n = K.shape[0]
    return float((K.sum() - np.trace(K)) / (n * (n - 1)))


def effective_rank(X, ell) -> float:
    """exp of the spectral entropy of the centered Gram eigenvalues."""
    X = np.asarray(X, dtype=float)
    K = gram_matrix(KernelSpec("se", X.shape[1]), _params(ell), X)
    w = np.linalg.eigvalsh(center_train_gram(K)[0])
    w = w[w > 1e-12 * max(w.max(), 1e-300)]
    if w.size == 0:
        return math.nan
    q = w / w.sum()
    return float(math.exp(-np.sum(q * np.log(q))))


def mmd2_unbiased(A, B, ell) -> float:
    """Unbiased squared MMD between two samples under the unit SE kernel."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    m, n = A.shape[0], B.shape[0]
    spec = KernelSpec("se", A.shape[1])
    p = _params(ell)
    Kaa = gram_matrix(spec, p, A)
    Kbb = gram_matrix(spec, p, B)
    Kab = cross_gram(spec, p, A, B)
    term_a = (Kaa.sum() - np.trace(Kaa)) / (m * (m - 1))
    term_b = (Kbb.sum() - np.trace(Kbb)) / (n * (n - 1))
    return float(term_a + term_b - 2.0 * Kab.mean())


def _temporal_halves(X):
    h = X.shape[0] // 2
    return X[:h], X[h:]


def _split_seeds(seed, count):
    return np.random.SeedSequence(seed).spawn(count)


def _subspace_affinity(X, ell, method: UnsupervisedMethod) -> float:
    n = X.shape[0]
    spec = KernelSpec("se", X.shape[1])
    p = _params(ell)
    vals = []
    for ss in _split_seeds(method.seed, method.n_splits):
        perm = np.random.default_rng(ss).permutation(n)
        a, b = np.sort(perm[: n // 2]), np.sort(perm[n // 2:])
        ma = fit_kpca(X[a], spec, p, method.n_components)
        mb = fit_kpca(X[b], spec, p, method.n_components)
        r = min(ma.r, mb.r)
        if r == 0:
            return math.nan
        qa = np.linalg.qr(score(ma, X)[:, :r])[0]
        qb = np.linalg.qr(score(mb, X)[:, :r])[0]
        cos = np.linalg.svd(qa.T @ qb, compute_uv=False)
        vals.append(float(np.mean(np.clip(cos, 0, 1) ** 2)))
    return float(np.mean(vals))


def _limit_variability(X, ell, method: UnsupervisedMethod) -> float:
    n = X.shape[0]
    spec = KernelSpec("se", X.shape[1])
    p = _params(ell)
    t2, spe = [], []
    for ss in _split_seeds(method.seed, method.n_bootstrap):
        idx = np.random.default_rng(ss).integers(0, n, n)
        Xb = X[idx]
        model = fit_kpca(Xb, spec, p, method.n_components)
        lim = control_limits(monitor(model, Xb), method.confidence)
        t2.append(lim.t2_limit)
        spe.append(lim.spe_limit)
    t2, spe = np.array(t2), np.array(spe)
    if t2.mean() <= 0 or spe.mean() <= 0:
        return math.nan
    return float(t2.std(ddof=1) / t2.mean() + spe.std(ddof=1) / spe.mean())


def _support_proxy(X, ell, method: UnsupervisedMethod) -> float:
    # Parzen support estimate: threshold at the nu-quantile of leave-one-out
    # densities of one half, rejection fraction measured on the other half
    n = X.shape[0]
    spec = KernelSpec("se", X.shape[1])
    p = _params(ell)
    fracs = []
    for ss in _split_seeds(method.seed, method.n_resamples):
        perm = np.random.default_rng(ss).permutation(n)
        a, b = perm[: n // 2], perm[n // 2:]
        Kaa = gram_matrix(spec, p, X[a])
        loo = (Kaa.sum(axis=1) - np.diag(Kaa)) / (a.size - 1)
        tau = np.quantile(loo, method.nu)
        dens_b = cross_gram(spec, p, X[b], X[a]).mean(axis=1)
        fracs.append(float(np.mean(dens_b < tau)))
    fracs = np.array(fracs)
    return float(abs(fracs.mean() - method.nu) + fracs.var(ddof=1))


def _krr_cv_error(X, ell, method: UnsupervisedMethod) -> float:
    n = X.shape[0]
    spec = KernelSpec("se", X.shape[1])
    p = _params(ell)
    perm = np.random.default_rng(np.random.SeedSequence(method.seed)).permutation(n)
    folds = np.array_split(perm, method.n_folds)
    sq = 0.0
    for f in folds:
        train = np.setdiff1d(perm, f)
        K = gram_matrix(spec, p, X[train])
        K[np.diag_indices_from(K)] += method.ridge
        alpha = np.linalg.solve(K, X[train])
        pred = cross_gram(spec, p, X[f], X[train]) @ alpha
        sq += float(np.sum((X[f] - pred) ** 2))
    return sq / X.size


def knn_adjacency(X, k) -> np.ndarray:
    D = cdist(X, X)
    np.fill_diagonal(D, np.inf)
    nbrs = np.argsort(D, axis=1, kind="stable")[:, :k]
    A = np.zeros_like(D)
    A[np.repeat(np.arange(X.shape[0]), k), nbrs.ravel()] = 1.0
    return np.maximum(A, A.T)


def centered_alignment(K1, K2) -> float:
    K1c = center_train_gram(K1)[0]
    K2c = center_train_gram(K2)[0]
    denom = np.linalg.norm(K1c) * np.linalg.norm(K2c)
    return float(np.sum(K1c * K2c) / denom) if denom > 0 else math.nan


_MAXIMIZE = {MethodId.M5, MethodId.M10}


def tune_unsupervised(method: UnsupervisedMethod, X_healthy) -> TuningResult:
    """Select an SE lengthscale from autoscaled healthy data."""
    X = np.asarray(X_healthy, dtype=float)
    if X.ndim != 2 or X.shape[0] < 10:
        raise InputError(f"unsupervised tuning needs at least 10 samples, got shape {X.shape}")
    mid = method.id
    if mid is MethodId.M1:
        ell = median_pairwise_distance(X)
        if not ell > 0:
            raise TuningError(mid.value, "all pairwise distances are zero")
        return TuningResult(mid, ell)
    if mid is MethodId.M2:
        ell = median_knn_distance(X, method.knn)
        if not ell > 0:
            raise TuningError(mid.value, "median k-NN distance is zero")
        return TuningResult(mid, ell)

    grid = np.asarray(method.grid) if method.grid is not None else default_grid(X, method.grid_size)
    if mid is MethodId.M3:
        return TuningResult(mid, _solve_similarity(X, grid, method.target_similarity), grid)

    criterion_fn = _criterion(mid, X, method)
    crit = np.empty(grid.size)
    for i, ell in enumerate(grid):
        try:
            crit[i] = criterion_fn(ell)
        except (DegenerateModelError, np.linalg.LinAlgError):
            crit[i] = math.nan
    if mid is MethodId.M4:
        _log_rank_monotonicity(grid, crit, method, X)
        crit = np.abs(crit - _target_rank(method, X))
    if not np.any(np.isfinite(crit)):
        raise TuningError(mid.value, "every candidate lengthscale gave a degenerate criterion")
    filled = np.where(np.isfinite(crit), crit, -np.inf if mid in _MAXIMIZE else np.inf)
    best = int(np.argmax(filled) if mid in _MAXIMIZE else np.argmin(filled))
    return TuningResult(mid, float(grid[best]), grid, crit)


def _target_rank(method, X):
    return method.target_rank if method.target_rank is not None else float(min(X.shape[1], 10))


def _criterion(mid, X, method):
    if mid is MethodId.M4:
        return lambda ell: effective_rank(X, ell)
    if mid is MethodId.M5:
        return lambda ell: _subspace_affinity(X, ell, method)
    if mid is MethodId.M6:
        return lambda ell: _limit_variability(X, ell, method)
    if mid is MethodId.M7:
        return lambda ell: _support_proxy(X, ell, method)
    if mid is MethodId.M8:
        A, B = _temporal_halves(X)
        return lambda ell: mmd2_unbiased(A, B, ell)
    if mid is MethodId.M9:
        return lambda ell: _krr_cv_error(X, ell, method)
    if mid is MethodId.M10:
        adj = knn_adjacency(X, method.knn or knn_k(X.shape[0]))
        spec = KernelSpec("se", X.shape[1])
        return lambda ell: centered_alignment(gram_matrix(spec, _params(ell), X), adj)
    raise InputError(f"no grid criterion for {mid}")


def _solve_similarity(X, grid, target) -> float:
    def f(log_ell):
        return mean_offdiag_similarity(X, math.exp(log_ell)) - target

    lo, hi = math.log(grid[0]), math.log(grid[-1])
    flo, fhi = f(lo), f(hi)
    if not (np.isfinite(flo) and np.isfinite(fhi)) or flo * fhi > 0:
        raise TuningError("M3", f"target similarity {target} is not bracketed by the grid")
    return math.exp(optimize.brentq(f, lo, hi, xtol=1e-12))


def _log_rank_monotonicity(grid, erank, method, X):
    ok = np.isfinite(erank)
    bumps = np.flatnonzero(np.diff(erank[ok]) > 1e-9)
    if bumps.size:
        logger.info("M4: effective rank increased with lengthscale at %d grid steps", bumps.size)


@dataclass(frozen=True)
class PseudoLabels:
    labels: np.ndarray
    limits: ControlLimits


def assign_pseudo_labels(model: KpcaModel, limits: ControlLimits, X_monitor) -> PseudoLabels:
    """Label 1 when a sample exceeds the T2 or the SPE limit."""
    stats = monitor(model, X_monitor)
    y = ((stats.t2 > limits.t2_limit) | (stats.spe > limits.spe_limit)).astype(int)
    return PseudoLabels(labels=y, limits=limits)


def pseudo_label_route(method: UnsupervisedMethod, X_healthy, X_label, r_policy=None, confidence=0.99):
    """Tune on healthy data, fit a provisional chart, label ``X_label`` against it."""
    tuned = tune_unsupervised(method, X_healthy)
    spec = KernelSpec("se", np.asarray(X_healthy).shape[1])
    model = fit_kpca(X_healthy, spec, tuned.params(), r_policy or ComponentPolicy())
    limits = control_limits(monitor(model, X_healthy), confidence)
    return tuned, assign_pseudo_labels(model, limits, X_label)

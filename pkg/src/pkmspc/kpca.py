"""Kernel PCA monitoring model: scores, T2/SPE statistics, limits, contributions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateModelError, InputError
from .kernels import (
    CenteringStats,
    KernelParams,
    KernelSpec,
    center_test_vector,
    center_train_gram,
    cross_gram,
    gram_matrix,
    kernel_gradient,
    self_similarity,
    self_similarity_gradient,
)

EIGEN_FLOOR = 1e-10


@dataclass(frozen=True)
class ComponentPolicy:
    """How many principal components to retain.

    ``n_components`` fixes r; otherwise the smallest r whose eigenvalues
    reach ``fraction`` of the centered-Gram eigenvalue sum is used.
    """

    n_components: int | None = None
    fraction: float = 0.95

    def __post_init__(self):
        if self.n_components is not None and self.n_components < 0:
            raise InputError("n_components must be non-negative")
        if not 0.0 < self.fraction <= 1.0:
            raise InputError(f"fraction must lie in (0, 1], got {self.fraction}")

    @classmethod
    def parse(cls, text) -> ComponentPolicy:
        """``"5"`` fixes five components, ``"0.9"`` sets a variance fraction."""
        if isinstance(text, ComponentPolicy):
            return text
        s = str(text).strip()
        if "." in s or "e" in s.lower():
            return cls(fraction=float(s))
        return cls(n_components=int(s))

    def __str__(self):
        return str(self.n_components) if self.n_components is not None else repr(self.fraction)

    def choose(self, eigenvalues: np.ndarray) -> int:
        if self.n_components is not None:
            if self.n_components > eigenvalues.size:
                warnings.warn(
                    f"requested {self.n_components} components but only "
                    f"{eigenvalues.size} eigenvalues exceed the floor",
                    stacklevel=3,
                )
            return min(self.n_components, eigenvalues.size)
        frac = np.cumsum(eigenvalues) / eigenvalues.sum()
        return int(np.searchsorted(frac, self.fraction - 1e-12) + 1)


@dataclass(frozen=True)
class KpcaModel:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    centering: CenteringStats
    X_train: np.ndarray
    spec: KernelSpec
    params: KernelParams
    spectrum: np.ndarray

    @property
    def r(self) -> int:
        return self.eigenvalues.size

    @property
    def n_train(self) -> int:
        return self.X_train.shape[0]

    @property
    def projection(self) -> np.ndarray:
        """U Lambda^{-1/2}: maps a centered kernel vector to scores."""
        return self.eigenvectors / np.sqrt(self.eigenvalues)[None, :]


@dataclass(frozen=True)
class MonitoringStatistics:
    t2: np.ndarray
    spe: np.ndarray


@dataclass(frozen=True)
class ControlLimits:
    t2_limit: float
    spe_limit: float
    confidence: float


def symmetric_eigh(Kc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Descending eigenpairs with the largest-magnitude entry of each vector positive."""
    w, V = np.linalg.eigh(Kc)
    order = np.argsort(w, kind="stable")[::-1]
    w = w[order]
    V = V[:, order]
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return w, V * signs[None, :]


def fit_kpca(X_healthy, spec: KernelSpec, params: KernelParams, r_policy=None) -> KpcaModel:
    """Fit the monitoring model on autoscaled healthy data."""
    X = np.asarray(X_healthy, dtype=float)
    if X.ndim != 2 or X.shape[0] < 3:
        raise InputError(f"need at least 3 healthy samples, got shape {X.shape}")
    policy = ComponentPolicy.parse(r_policy) if r_policy is not None else ComponentPolicy()
    K = gram_matrix(spec, params, X)
    Kc, stats = center_train_gram(K)
    w, V = symmetric_eigh(Kc)
    scale = max(float(np.abs(K).max()), np.finfo(float).tiny)
    if not w[0] > 1e-12 * X.shape[0] * scale:
        raise DegenerateModelError("centered Gram matrix has no positive eigenvalue")
    keep = w > EIGEN_FLOOR * w[0]
    w_valid = w[keep]
    r = policy.choose(w_valid)
    return KpcaModel(
        eigenvalues=w_valid[:r].copy(),
        eigenvectors=V[:, :r].copy(),
        centering=stats,
        X_train=X,
        spec=spec,
        params=params,
        spectrum=w,
    )


def centered_kernel(model: KpcaModel, X):
    """Centered kernel vectors and centered self-similarities for rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k = cross_gram(model.spec, model.params, X, model.X_train)
    k_self = self_similarity(model.spec, model.params, X)
    return center_test_vector(k, k_self, model.centering)


def score(model: KpcaModel, x) -> np.ndarray:
    """Scores t = k_c(x)^T U Lambda^{-1/2}; a matrix of scores for a matrix input."""
    x = np.asarray(x, dtype=float)
    kc, _ = centered_kernel(model, x)
    t = kc @ model.projection
    return t[0] if x.ndim == 1 else t


def t2_statistic(model: KpcaModel, t) -> np.ndarray | float:
    t = np.asarray(t, dtype=float)
    if t.shape[-1] != model.r:
        raise InputError(f"score vector must have length {model.r}")
    val = np.sum(t**2 / model.eigenvalues, axis=-1)
    return float(val) if val.ndim == 0 else val


def spe_statistic(model: KpcaModel, x, t=None) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    kc, kc_self = centered_kernel(model, x)
    if t is None:
        t = kc @ model.projection
    t = np.atleast_2d(t)
    val = np.maximum(np.atleast_1d(kc_self) - np.sum(t**2, axis=-1), 0.0)
    return float(val[0]) if x.ndim == 1 else val


def monitor(model: KpcaModel, X) -> MonitoringStatistics:
    """T2 and SPE for every row of ``X``."""
    kc, kc_self = centered_kernel(model, X)
    t = kc @ model.projection
    t2 = np.sum(t**2 / model.eigenvalues, axis=1)
    spe = np.maximum(kc_self - np.sum(t**2, axis=1), 0.0)
    return MonitoringStatistics(t2=t2, spe=spe)


def control_limits(healthy_stats: MonitoringStatistics, confidence=0.99) -> ControlLimits:
    """Empirical (linearly interpolated) quantiles of healthy T2 and SPE."""
    if not 0.0 < confidence < 1.0:
        raise InputError(f"confidence must lie in (0, 1), got {confidence}")
    t2 = np.asarray(healthy_stats.t2, dtype=float)
    spe = np.asarray(healthy_stats.spe, dtype=float)
    if t2.size < 20 or spe.size < 20:
        raise InputError(f"control limits need at least 20 healthy samples, got {t2.size}")
    return ControlLimits(
        t2_limit=float(np.quantile(t2, confidence)),
        spe_limit=float(np.quantile(spe, confidence)),
        confidence=float(confidence),
    )


def _score_jacobian(model: KpcaModel, x):
    """Scores t(x), their Jacobian dt/dx (r x p) and the mean kernel gradient."""
    G = kernel_gradient(model.spec, model.params, x, model.X_train)
    g_mean = G.mean(axis=0)
    dt = model.projection.T @ (G - g_mean[None, :])
    t = score(model, x)
    return t, dt, g_mean


def t2_contributions(model: KpcaModel, x) -> np.ndarray:
    """Per-variable T2 contributions sum_h (t_h / lambda_h) dt_h/dx_d.

    By the chain rule this equals half the gradient of T2.
    """
    x = np.asarray(x, dtype=float).ravel()
    t, dt, _ = _score_jacobian(model, x)
    return (t / model.eigenvalues) @ dt


def spe_contributions(model: KpcaModel, x) -> np.ndarray:
    """Per-variable SPE contributions dSPE/dx_d (gradient of the unclamped SPE)."""
    x = np.asarray(x, dtype=float).ravel()
    t, dt, g_mean = _score_jacobian(model, x)
    d_self = self_similarity_gradient(model.spec, model.params, x) - 2.0 * g_mean
    return d_self - 2.0 * (t @ dt)


def pca_t2_scale(n_train: int) -> float:
    """Factor turning linear-kernel K-PCA T2 into classic PCA T2."""
    return float(n_train - 1)


__all__ = [
    "ComponentPolicy",
    "ControlLimits",
    "KpcaModel",
    "MonitoringStatistics",
    "centered_kernel",
    "control_limits",
    "fit_kpca",
    "monitor",
    "pca_t2_scale",
    "score",
    "spe_contributions",
    "spe_statistic",
    "symmetric_eigh",
    "t2_contributions",
    "t2_statistic",
]

"""Squared-exponential kernels in log-parameter form, Gram matrices and centering.

Parameters are always held on the log scale and only exponentiated at
evaluation time. The noise standard deviation travels with the kernel
parameters but never enters a kernel value; only the likelihoods use it.

A plain linear kernel ``s_f^2 * x.y`` is provided as well. It has no
lengthscales and exists so that kernel PCA can be checked against classic
PCA.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InputError


class KernelFamily(str, enum.Enum):
    SE = "se"
    ARD = "ard"
    LINEAR = "linear"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and input dimension."""

    family: KernelFamily
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if int(self.dim) < 1:
            raise InputError(f"kernel dimension must be positive, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))

    @property
    def n_lengthscales(self) -> int:
        if self.family is KernelFamily.SE:
            return 1
        if self.family is KernelFamily.ARD:
            return self.dim
        return 0

    @property
    def n_params(self) -> int:
        return self.n_lengthscales + 2

    def param_names(self) -> list[str]:
        if self.family is KernelFamily.SE:
            ls = ["log_lengthscale"]
        else:
            ls = [f"log_lengthscale_{d + 1}" for d in range(self.n_lengthscales)]
        return ls + ["log_signal_sd", "log_noise_sd"]

    def check(self, params: KernelParams) -> None:
        n = params.log_lengthscales.size
        if n != self.n_lengthscales:
            raise InputError(
                f"{self.family.value} kernel of dimension {self.dim} needs "
                f"{self.n_lengthscales} lengthscale(s), got {n}"
            )


@dataclass(frozen=True)
class KernelParams:
    """Kernel parameter vector theta, stored in log scale."""

    log_lengthscales: np.ndarray
    log_signal_sd: float
    log_noise_sd: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "log_lengthscales", ls)
        object.__setattr__(self, "log_signal_sd", float(self.log_signal_sd))
        object.__setattr__(self, "log_noise_sd", float(self.log_noise_sd))

    @classmethod
    def from_natural(cls, lengthscales, signal_sd=1.0, noise_sd=0.1) -> KernelParams:
        ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
        if np.any(ls <= 0) or signal_sd <= 0 or noise_sd <= 0:
            raise InputError("natural-scale kernel parameters must be positive")
        return cls(np.log(ls), np.log(signal_sd), np.log(noise_sd))

    @classmethod
    def from_vector(cls, theta, n_lengthscales: int) -> KernelParams:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != n_lengthscales + 2:
            raise InputError(
                f"expected {n_lengthscales + 2} log-parameters, got {theta.size}"
            )
        return cls(theta[:n_lengthscales], theta[-2], theta[-1])

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.log_lengthscales, [self.log_signal_sd, self.log_noise_sd]]
        )

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def signal_sd(self) -> float:
        return float(np.exp(self.log_signal_sd))

    @property
    def noise_sd(self) -> float:
        return float(np.exp(self.log_noise_sd))


@dataclass(frozen=True)
class CenteringStats:
    """Training Gram statistics needed to center test kernel vectors."""

    row_means: np.ndarray
    grand_mean: float
    n_train: int


def _inverse_lengthscales(spec: KernelSpec, params: KernelParams) -> np.ndarray:
    # SE broadcasts its single lengthscale so that it shares the ARD code path.
    spec.check(params)
    return np.broadcast_to(np.exp(-params.log_lengthscales), (spec.dim,))


def _as_matrix(X, spec: KernelSpec, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != spec.dim:
        raise InputError(
            f"{name} must have {spec.dim} columns, got shape {np.shape(X)}"
        )
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains non-finite entries")
    return X


def eval_kernel(spec: KernelSpec, params: KernelParams, x_i, x_j) -> float:
    """Kernel value k(x_i, x_j) for a single pair of points."""
    x_i = np.asarray(x_i, dtype=float).ravel()
    x_j = np.asarray(x_j, dtype=float).ravel()
    if x_i.size != spec.dim or x_j.size != spec.dim:
        raise InputError(
            f"points must have length {spec.dim}, got {x_i.size} and {x_j.size}"
        )
    sf2 = np.exp(2.0 * params.log_signal_sd)
    if spec.family is KernelFamily.LINEAR:
        spec.check(params)
        return float(sf2 * np.dot(x_i, x_j))
    inv = _inverse_lengthscales(spec, params)
    z = (x_i - x_j) * inv
    return float(sf2 * np.exp(-0.5 * np.dot(z, z)))


def cross_gram(spec: KernelSpec, params: KernelParams, A, B) -> np.ndarray:
    """Kernel matrix between the rows of ``A`` and the rows of ``B``."""
    A = _as_matrix(A, spec, "A")
    B = _as_matrix(B, spec, "B")
    sf2 = np.exp(2.0 * params.log_signal_sd)
    if spec.family is KernelFamily.LINEAR:
        spec.check(params)
        return sf2 * (A @ B.T)
    inv = _inverse_lengthscales(spec, params)
    d2 = cdist(A * inv, B * inv, "sqeuclidean")
    return sf2 * np.exp(-0.5 * d2)


def gram_matrix(spec: KernelSpec, params: KernelParams, X) -> np.ndarray:
    """Symmetric training Gram matrix K with K[i, j] = k(x_i, x_j)."""
    X = _as_matrix(X, spec)
    K = cross_gram(spec, params, X, X)
    # cdist is exactly symmetric already; the linear product may not be
    return 0.5 * (K + K.T) if spec.family is KernelFamily.LINEAR else K


def self_similarity(spec: KernelSpec, params: KernelParams, X) -> np.ndarray:
    """Uncentered k(x, x) for every row of ``X``."""
    X = _as_matrix(X, spec)
    sf2 = np.exp(2.0 * params.log_signal_sd)
    if spec.family is KernelFamily.LINEAR:
        return sf2 * np.einsum("ij,ij->i", X, X)
    return np.full(X.shape[0], sf2)


def center_train_gram(K) -> tuple[np.ndarray, CenteringStats]:
    """Double-center a training Gram matrix.

    Returns ``K - 1K - K1 + 1K1`` (``1`` the matrix of entries ``1/n``) along
    with the row means and grand mean of the uncentered matrix.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InputError(f"Gram matrix must be square, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise InputError("Gram matrix contains non-finite entries")
    row_means = K.mean(axis=1)
    col_means = K.mean(axis=0)
    grand = float(row_means.mean())
    Kc = K - row_means[:, None] - col_means[None, :] + grand
    stats = CenteringStats(row_means=row_means, grand_mean=grand, n_train=K.shape[0])
    return Kc, stats


def center_test_vector(k_vec, k_self, stats: CenteringStats):
    """Center test kernel values with the training statistics.

    ``k_vec`` may be a single vector of length n or a matrix whose rows are
    kernel vectors of several test points; ``k_self`` then holds one
    self-similarity per row.
    """
    k_vec = np.asarray(k_vec, dtype=float)
    if k_vec.shape[-1] != stats.n_train:
        raise InputError(
            f"kernel vector length {k_vec.shape[-1]} does not match "
            f"{stats.n_train} training samples"
        )
    mean_k = k_vec.mean(axis=-1, keepdims=True)
    kc = k_vec - mean_k - stats.row_means + stats.grand_mean
    kc_self = np.asarray(k_self, dtype=float) - 2.0 * mean_k[..., 0] + stats.grand_mean
    if kc_self.ndim == 0:
        kc_self = float(kc_self)
    return kc, kc_self


def kernel_gradient(spec: KernelSpec, params: KernelParams, x, X_train) -> np.ndarray:
    """Gradient of k(x, x_i) with respect to x, one row per training point."""
    X_train = _as_matrix(X_train, spec, "X_train")
    x = np.asarray(x, dtype=float).ravel()
    if x.size != spec.dim:
        raise InputError(f"x must have length {spec.dim}, got {x.size}")
    sf2 = np.exp(2.0 * params.log_signal_sd)
    if spec.family is KernelFamily.LINEAR:
        return sf2 * X_train.copy()
    inv2 = _inverse_lengthscales(spec, params) ** 2
    k = cross_gram(spec, params, x[None, :], X_train)[0]
    return -k[:, None] * (x[None, :] - X_train) * inv2[None, :]


def self_similarity_gradient(spec: KernelSpec, params: KernelParams, x) -> np.ndarray:
    """Gradient of k(x, x) with respect to x (zero for stationary kernels)."""
    x = np.asarray(x, dtype=float).ravel()
    if spec.family is KernelFamily.LINEAR:
        return 2.0 * np.exp(2.0 * params.log_signal_sd) * x
    return np.zeros_like(x)

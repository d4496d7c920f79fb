"""Deterministic kernel calibration.

Two intermediary likelihoods are provided: the Gaussian-process marginal
likelihood applied to binary labels, and a Gaussian likelihood of a linear
regression of the labels on kernel PCA scores (K-PCR). Either can be maximized
over log kernel parameters with L-BFGS, Nelder-Mead, a genetic algorithm or
Kernel Flows.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import optimize

from .errors import DegenerateModelError, InputError, NumericalError
from .kernels import KernelParams, KernelSpec, gram_matrix
from .kpca import ComponentPolicy, fit_kpca, score

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


def jittered_cholesky(C: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``C``, adding diagonal jitter only if needed.

    Jitter starts at 1e-10 * trace(C)/n and grows tenfold up to 1e-4 * trace(C)/n.
    """
    try:
        return np.linalg.cholesky(C), 0.0
    except np.linalg.LinAlgError:
        pass
    n = C.shape[0]
    base = float(np.trace(C)) / n
    tried = []
    if not np.isfinite(base) or base <= 0:
        raise NumericalError("matrix has a non-positive or non-finite trace", tried)
    for k in range(7):
        jitter = base * 10.0 ** (k - 10)
        tried.append(jitter)
        try:
            return np.linalg.cholesky(C + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("Cholesky failed after maximal jitter", tried)


def gp_log_marginal(spec: KernelSpec, params: KernelParams, X, y) -> float:
    """log N(y | 0, K + s_n^2 I)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if X.shape[0] != n:
        raise InputError(f"X has {X.shape[0]} rows but y has {n} entries")
    C = gram_matrix(spec, params, X)
    C[np.diag_indices_from(C)] += params.noise_sd**2
    L, _ = jittered_cholesky(C)
    alpha = sla.solve_triangular(L, y, lower=True)
    return float(-0.5 * alpha @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI)


@dataclass(frozen=True)
class KpcrFit:
    log_likelihood: float
    beta: np.ndarray
    residuals: np.ndarray
    sigma: float
    used_pinv: bool


def kpcr_fit(spec: KernelSpec, params: KernelParams, X, y, r: int, sigma=None) -> KpcrFit:
    """Least-squares regression of ``y`` on the K-PCA training scores."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    model = fit_kpca(X, spec, params, ComponentPolicy(n_components=r))
    if model.r < r:
        logger.debug("K-PCR: only %d of %d components available", model.r, r)
    T = score(model, X)
    used_pinv = False
    gram = T.T @ T
    try:
        if model.r == 0 or np.linalg.cond(gram) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned score matrix")
        beta = sla.solve(gram, T.T @ y, assume_a="pos")
    except (np.linalg.LinAlgError, sla.LinAlgError):
        beta = np.linalg.pinv(T) @ y if model.r else np.zeros(0)
        used_pinv = True
    resid = y - T @ beta
    rss = float(resid @ resid)
    if sigma is None:
        sigma = max(math.sqrt(rss / max(n - 1, 1)), 1e-12)
    ll = -0.5 * rss / sigma**2 - 0.5 * n * math.log(2.0 * math.pi * sigma**2)
    return KpcrFit(ll, beta, resid, float(sigma), used_pinv)


def kpcr_log_likelihood(spec, params, X, y, r, sigma=None) -> float:
    return kpcr_fit(spec, params, X, y, r, sigma).log_likelihood


class ObjectiveKind(str, enum.Enum):
    GP_MARGINAL = "gpc"
    KPCR = "kpcr"


@dataclass(frozen=True)
class CalibrationObjective:
    """Log-likelihood of labelled data as a function of the log-parameter vector."""

    kind: ObjectiveKind
    spec: KernelSpec
    X: np.ndarray
    y: np.ndarray
    r: int | None = None
    sigma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != y.size:
            raise InputError("X and y must have matching row counts")
        if not np.all((y == 0) | (y == 1)):
            raise InputError("labels must be 0 or 1")
        if self.kind is ObjectiveKind.KPCR:
            if self.r is None or self.r < 1:
                raise InputError("K-PCR objective needs a component count r >= 1")
        elif self.r is not None or self.sigma is not None:
            raise InputError("r and sigma only apply to the K-PCR objective")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_samples(self) -> int:
        return self.y.size

    def params(self, theta) -> KernelParams:
        return KernelParams.from_vector(theta, self.spec.n_lengthscales)

    def __call__(self, theta) -> float:
        p = self.params(theta)
        if self.kind is ObjectiveKind.GP_MARGINAL:
            return gp_log_marginal(self.spec, p, self.X, self.y)
        return kpcr_log_likelihood(self.spec, p, self.X, self.y, self.r, self.sigma)

    def subset(self, idx) -> CalibrationObjective:
        idx = np.asarray(idx)
        return CalibrationObjective(self.kind, self.spec, self.X[idx], self.y[idx], self.r, self.sigma)

    def kf_loss(self, theta, batch, sub) -> float:
        """Kernel Flows loss for one batch / sub-batch draw.

        GP route: 1 - (y_s' C_s^-1 y_s) / (y_b' C_b^-1 y_b), the relative loss
        of RKHS norm when half of the batch is dropped. K-PCR route: relative
        squared error on the batch of a K-PCR model fitted on the sub-batch.
        """
        p = self.params(theta)
        if self.kind is ObjectiveKind.GP_MARGINAL:
            nb = _gp_norm(self.spec, p, self.X[batch], self.y[batch])
            ns = _gp_norm(self.spec, p, self.X[sub], self.y[sub])
            return 1.0 - ns / nb if nb > 0 else math.nan
        Xs, ys = self.X[sub], self.y[sub]
        yb = self.y[batch]
        denom = float(np.sum((yb - yb.mean()) ** 2))
        if denom == 0:
            return math.nan
        model = fit_kpca(Xs, self.spec, p, ComponentPolicy(n_components=self.r))
        Ts = score(model, Xs)
        beta = np.linalg.lstsq(Ts, ys - ys.mean(), rcond=None)[0]
        pred = ys.mean() + score(model, self.X[batch]) @ beta
        return float(np.sum((yb - pred) ** 2)) / denom


def _gp_norm(spec, params, X, y) -> float:
    C = gram_matrix(spec, params, X)
    C[np.diag_indices_from(C)] += params.noise_sd**2
    L, _ = jittered_cholesky(C)
    a = sla.solve_triangular(L, y, lower=True)
    return float(a @ a)


class Method(str, enum.Enum):
    LBFGS = "lbfgs"
    NELDER_MEAD = "nelder-mead"
    GA = "ga"
    KERNEL_FLOWS = "kf"


_DEFAULT_ITERS = {
    Method.LBFGS: 200,
    Method.NELDER_MEAD: 1000,
    Method.GA: 100,
    Method.KERNEL_FLOWS: 200,
}


@dataclass(frozen=True)
class OptimizerConfig:
    method: Method = Method.LBFGS
    max_iters: int | None = None
    tol: float = 1e-6
    seed: int = 0
    fd_step: float = 1e-5
    # genetic algorithm
    population: int = 30
    tournament: int = 3
    mutation_sd: float = 0.1
    crossover_rate: float = 0.7
    init_spread: float = 0.5
    patience: int = 20
    # Nelder-Mead
    simplex_scale: float = 0.5
    # Kernel Flows
    kf_batch_fraction: float = 0.5
    kf_step: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        positives = (self.tol, self.fd_step, self.population, self.tournament, self.mutation_sd,
                     self.simplex_scale, self.kf_batch_fraction, self.kf_step, self.patience)
        if any(v <= 0 for v in positives) or (self.max_iters is not None and self.max_iters <= 0):
            raise InputError("optimizer settings must be positive")
        if not 0 <= self.crossover_rate <= 1 or self.kf_batch_fraction > 1:
            raise InputError("rates and fractions must lie in [0, 1]")

    @property
    def iterations(self) -> int:
        return self.max_iters or _DEFAULT_ITERS[self.method]


@dataclass
class CalibrationResult:
    theta_hat: KernelParams
    loss_trace: np.ndarray
    wall_time: float
    converged: bool
    objective_value: float
    n_evaluations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def theta_vector(self) -> np.ndarray:
        return self.theta_hat.to_vector()


def fd_gradient(f, x, h=1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


class _Tracker:
    """Wraps the negated objective; counts calls and remembers the best point."""

    def __init__(self, objective):
        self.objective = objective
        self.n_calls = 0
        self.best_x = None
        self.best_loss = math.inf
        self._cache_key = None
        self._cache_val = None

    def loss(self, x) -> float:
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        if key == self._cache_key:
            return self._cache_val
        self.n_calls += 1
        try:
            val = -float(self.objective(x))
        except (NumericalError, DegenerateModelError, np.linalg.LinAlgError, FloatingPointError):
            val = math.inf
        if not math.isfinite(val):
            val = math.inf
        if val < self.best_loss:
            self.best_loss = val
            self.best_x = x.copy()
        self._cache_key, self._cache_val = key, val
        return val


def calibrate(objective, config: OptimizerConfig, init) -> CalibrationResult:
    """Maximize ``objective`` (a callable on log-parameter vectors) from ``init``.

    Returns the best point evaluated, so the result is never worse than
    ``init``. ``loss_trace`` holds negated objective values: per accepted
    iterate for L-BFGS and Nelder-Mead, best-so-far per generation or step for
    the genetic algorithm and Kernel Flows.
    """
    x0 = init.to_vector() if isinstance(init, KernelParams) else np.asarray(init, dtype=float).ravel()
    tracker = _Tracker(objective)
    start = time.perf_counter()
    f0 = tracker.loss(x0)
    if not math.isfinite(f0):
        raise InputError("objective is not finite at the initial parameters")
    runner = {
        Method.LBFGS: _run_lbfgs,
        Method.NELDER_MEAD: _run_nelder_mead,
        Method.GA: _run_ga,
        Method.KERNEL_FLOWS: _run_kernel_flows,
    }[config.method]
    trace, converged, info = runner(tracker, x0, config, objective)
    wall = time.perf_counter() - start
    n_ls = x0.size - 2
    return CalibrationResult(
        theta_hat=KernelParams.from_vector(tracker.best_x, n_ls),
        loss_trace=np.asarray(trace, dtype=float),
        wall_time=wall,
        converged=bool(converged),
        objective_value=-tracker.best_loss,
        n_evaluations=tracker.n_calls,
        info=info,
    )


def _run_lbfgs(tracker, x0, cfg, _objective):
    trace = [tracker.loss(x0)]

    def grad(x):
        return fd_gradient(tracker.loss, x, cfg.fd_step)

    def callback(xk):
        trace.append(tracker.loss(xk))

    res = optimize.minimize(
        tracker.loss, x0, jac=grad, method="L-BFGS-B", callback=callback,
        options={"maxiter": cfg.iterations, "gtol": cfg.tol, "ftol": cfg.tol * 1e-3},
    )
    return trace, res.success, {"message": str(res.message), "iterations": int(res.nit)}


def _run_nelder_mead(tracker, x0, cfg, _objective):
    trace = [tracker.loss(x0)]
    simplex = np.vstack([x0, x0 + cfg.simplex_scale * np.eye(x0.size)])

    def callback(xk):
        trace.append(tracker.loss(xk))

    res = optimize.minimize(
        tracker.loss, x0, method="Nelder-Mead", callback=callback,
        options={"maxiter": cfg.iterations, "xatol": cfg.tol, "fatol": cfg.tol,
                 "initial_simplex": simplex},
    )
    return trace, res.success, {"message": str(res.message), "iterations": int(res.nit)}


def _run_ga(tracker, x0, cfg, _objective):
    rng = np.random.default_rng(cfg.seed)
    m = x0.size
    pop = x0 + cfg.init_spread * rng.standard_normal((cfg.population, m))
    pop[0] = x0
    fit = np.array([tracker.loss(ind) for ind in pop])
    best = [float(fit.min())]
    stall = 0
    converged = False
    for _gen in range(cfg.iterations):
        children = [pop[np.argmin(fit)].copy()]
        while len(children) < cfg.population:
            p1 = _tournament(pop, fit, cfg.tournament, rng)
            p2 = _tournament(pop, fit, cfg.tournament, rng)
            if rng.random() < cfg.crossover_rate:
                w = rng.random(m)
                child = w * p1 + (1.0 - w) * p2
            else:
                child = p1.copy()
            child = child + cfg.mutation_sd * rng.standard_normal(m)
            children.append(child)
        pop = np.array(children)
        fit = np.array([tracker.loss(ind) for ind in pop])
        best.append(min(best[-1], float(fit.min())))
        stall = stall + 1 if best[-2] - best[-1] <= cfg.tol else 0
        if stall >= cfg.patience:
            converged = True
            break
    return best, converged, {"generations": len(best) - 1}


def _tournament(pop, fit, size, rng):
    idx = rng.choice(pop.shape[0], size=size, replace=False)
    return pop[idx[np.argmin(fit[idx])]].copy()


def _run_kernel_flows(tracker, x0, cfg, objective):
    rng = np.random.default_rng(cfg.seed)
    kf_loss = getattr(objective, "kf_loss", None)
    n = getattr(objective, "n_samples", None)
    x = x0.copy()
    best = [tracker.best_loss]
    stall = 0
    converged = False
    skipped = 0
    for _ in range(cfg.iterations):
        if kf_loss is not None and n is not None:
            nb = min(n, max(4, int(math.ceil(cfg.kf_batch_fraction * n))))
            batch = np.sort(rng.choice(n, size=nb, replace=False))
            sub = np.sort(rng.permutation(batch)[: nb // 2])

            def rho(z, batch=batch, sub=sub):
                try:
                    return kf_loss(z, batch, sub)
                except (NumericalError, DegenerateModelError, np.linalg.LinAlgError):
                    return math.nan
        else:
            rho = tracker.loss
        g = fd_gradient(rho, x, cfg.fd_step)
        if not np.all(np.isfinite(g)):
            skipped += 1
            best.append(best[-1])
            continue
        norm = float(np.linalg.norm(g))
        if norm > 10.0:
            g = g * (10.0 / norm)
        x = x - cfg.kf_step * g
        tracker.loss(x)
        best.append(tracker.best_loss)
        stall = stall + 1 if best[-2] - best[-1] <= cfg.tol else 0
        if stall >= cfg.patience:
            converged = True
            break
    return best, converged, {"steps": len(best) - 1, "skipped_batches": skipped}

import math

import numpy as np
import pytest

from pkmspc.calibration import (
    CalibrationObjective,
    Method,
    OptimizerConfig,
    calibrate,
    fd_gradient,
    gp_log_marginal,
    jittered_cholesky,
    kpcr_fit,
    kpcr_log_likelihood,
)
from pkmspc.errors import InputError, NumericalError
from pkmspc.kernels import KernelParams, KernelSpec, gram_matrix
from pkmspc.kpca import fit_kpca, score

SE1 = KernelSpec("se", 1)
SE2 = KernelSpec("se", 2)


def dense_gp_oracle(spec, params, X, y):
    C = gram_matrix(spec, params, X) + params.noise_sd**2 * np.eye(len(y))
    sign, logdet = np.linalg.slogdet(C)
    assert sign > 0
    return -0.5 * y @ np.linalg.inv(C) @ y - 0.5 * logdet - 0.5 * len(y) * math.log(2 * math.pi)


class TestGpMarginal:
    def test_single_zero_label(self):
        p = KernelParams.from_natural([0.7], 1.3, 0.2)
        got = gp_log_marginal(SE2, p, np.array([[0.1, 0.2]]), np.array([0.0]))
        assert got == pytest.approx(-0.5 * math.log(2 * math.pi * (1.3**2 + 0.2**2)), rel=1e-14)

    def test_two_point_hand_instance(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0]])
        y = np.array([0.0, 1.0])
        p = KernelParams.from_natural([1.0], 1.0, 0.5)
        # C = [[1.25, e^-1], [e^-1, 1.25]]; quadratic form = 1.25 / det
        c = math.exp(-1.0)
        det = 1.25**2 - c**2
        expected = -0.5 * 1.25 / det - 0.5 * math.log(det) - math.log(2 * math.pi)
        assert gp_log_marginal(SE2, p, X, y) == pytest.approx(expected, rel=1e-12)

    def test_matches_dense_inverse(self):
        rng = np.random.default_rng(20)
        for _ in range(20):
            n = int(rng.integers(2, 21))
            X = rng.normal(size=(n, 2))
            y = rng.integers(0, 2, n).astype(float)
            p = KernelParams(rng.normal(0, 0.5, 1), rng.normal(0, 0.3), rng.normal(-1, 0.3))
            got = gp_log_marginal(SE2, p, X, y)
            assert got == pytest.approx(dense_gp_oracle(SE2, p, X, y), rel=1e-10)

    def test_noise_to_infinity_decreases(self):
        X = np.random.default_rng(21).normal(size=(5, 2))
        y = np.zeros(5)
        vals = [gp_log_marginal(SE2, KernelParams([0.0], 0.0, ls), X, y) for ls in np.linspace(0, 8, 9)]
        assert np.all(np.diff(vals) < 0)
        # each unit of log s_n costs about n nats once noise dominates
        assert vals[-1] - vals[-2] == pytest.approx(-5.0, rel=1e-3)

    def test_row_mismatch(self):
        with pytest.raises(InputError):
            gp_log_marginal(SE2, KernelParams([0.0], 0, 0), np.zeros((3, 2)), np.zeros(2))


class TestJitter:
    def test_no_jitter_for_spd(self):
        _, j = jittered_cholesky(np.eye(3))
        assert j == 0.0

    def test_escalates_for_singular(self):
        C = np.ones((4, 4))
        L, j = jittered_cholesky(C)
        assert 0 < j <= 1e-4
        np.testing.assert_allclose(L @ L.T, C + j * np.eye(4), atol=1e-12)

    def test_failure_reports_levels(self):
        C = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(NumericalError) as exc:
            jittered_cholesky(C)
        assert len(exc.value.jitters) == 7
        assert exc.value.jitters[-1] == pytest.approx(1e-4 / 3)


class TestKpcr:
    @pytest.fixture
    def setup(self):
        rng = np.random.default_rng(22)
        X = rng.normal(size=(20, 2))
        p = KernelParams.from_natural([1.2], 1.0, 0.1)
        T = score(fit_kpca(X, SE2, p, 3), X)
        return X, p, T

    def test_zero_residual(self, setup):
        X, p, T = setup
        y = T @ np.array([0.5, -1.0, 2.0])
        assert kpcr_log_likelihood(SE2, p, X, y, 3, sigma=0.3) == pytest.approx(
            -10 * math.log(2 * math.pi * 0.09), rel=1e-9
        )

    def test_orthogonal_labels(self, setup):
        X, p, T = setup
        rng = np.random.default_rng(23)
        y = rng.normal(size=20)
        y -= T @ np.linalg.lstsq(T, y, rcond=None)[0]
        fit = kpcr_fit(SE2, p, X, y, 3, sigma=1.0)
        assert np.linalg.norm(fit.residuals) == pytest.approx(np.linalg.norm(y), rel=1e-9)

    def test_normal_equations_oracle(self, setup):
        X, p, T = setup
        y = (np.random.default_rng(24).random(20) > 0.5).astype(float)
        beta = np.linalg.solve(T.T @ T, T.T @ y)
        rss = np.sum((y - T @ beta) ** 2)
        fit = kpcr_fit(SE2, p, X, y, 3, sigma=0.7)
        assert np.sum(fit.residuals**2) == pytest.approx(rss, rel=1e-10)
        assert fit.log_likelihood == pytest.approx(-rss / (2 * 0.49) - 10 * math.log(2 * math.pi * 0.49), rel=1e-10)
        assert not fit.used_pinv

    def test_default_sigma(self, setup):
        X, p, _ = setup
        y = (np.arange(20) % 3 == 0).astype(float)
        fit = kpcr_fit(SE2, p, X, y, 3)
        assert fit.sigma == pytest.approx(math.sqrt(np.sum(fit.residuals**2) / 19))


def quadratic(c):
    c = np.asarray(c, dtype=float)
    return lambda th: -float(np.sum((np.asarray(th) - c) ** 2))


class TestCalibrate:
    C = np.array([0.5, -0.3, 1.0])

    @pytest.mark.parametrize(
        "method,tol",
        [("lbfgs", 1e-3), ("nelder-mead", 1e-3), ("ga", 1e-1), ("kf", 1e-1)],
    )
    def test_quadratic_harness(self, method, tol):
        res = calibrate(quadratic(self.C), OptimizerConfig(method=method, seed=3), np.zeros(3))
        assert np.abs(res.theta_vector - self.C).max() < tol

    @pytest.mark.parametrize("method", list(Method))
    def test_never_worse_than_init(self, method):
        X = np.random.default_rng(25).normal(size=(30, 2))
        y = (X[:, 0] > 0.3).astype(float)
        obj = CalibrationObjective("gpc", SE2, X, y)
        init = KernelParams.from_natural([1.0], 1.0, 0.3)
        res = calibrate(obj, OptimizerConfig(method=method, max_iters=15, seed=1), init)
        assert res.objective_value >= obj(init.to_vector())
        assert res.objective_value == pytest.approx(obj(res.theta_vector))

    @pytest.mark.parametrize("method", ["lbfgs", "nelder-mead"])
    def test_trace_non_increasing(self, method):
        X = np.random.default_rng(26).normal(size=(30, 2))
        y = (np.sum(X**2, axis=1) > 1.5).astype(float)
        obj = CalibrationObjective("gpc", SE2, X, y)
        res = calibrate(obj, OptimizerConfig(method=method), KernelParams.from_natural([2.0], 1.0, 0.5))
        assert np.all(np.diff(res.loss_trace) <= 1e-12)

    @pytest.mark.parametrize("method", ["ga", "kf"])
    def test_best_so_far_monotone(self, method):
        X = np.random.default_rng(27).normal(size=(30, 2))
        y = (X[:, 1] > 0).astype(float)
        obj = CalibrationObjective("gpc", SE2, X, y)
        res = calibrate(obj, OptimizerConfig(method=method, max_iters=30, seed=2), KernelParams.from_natural([1.0], 1.0, 0.5))
        assert np.all(np.diff(res.loss_trace) <= 0)

    @pytest.mark.parametrize("method", list(Method))
    def test_deterministic(self, method):
        X = np.random.default_rng(28).normal(size=(25, 2))
        y = (X[:, 0] + X[:, 1] > 0).astype(float)
        obj = CalibrationObjective("gpc", SE2, X, y)
        init = KernelParams.from_natural([1.0], 1.0, 0.5)
        cfg = OptimizerConfig(method=method, max_iters=20, seed=9)
        a = calibrate(obj, cfg, init)
        b = calibrate(obj, cfg, init)
        np.testing.assert_array_equal(a.loss_trace, b.loss_trace)
        np.testing.assert_array_equal(a.theta_vector, b.theta_vector)

    def test_kpcr_objective_runs(self):
        X = np.random.default_rng(29).normal(size=(40, 2))
        y = (np.sum(X**2, axis=1) > 1.4).astype(float)
        obj = CalibrationObjective("kpcr", SE2, X, y, r=4)
        for method in Method:
            res = calibrate(obj, OptimizerConfig(method=method, max_iters=10, seed=0), KernelParams.from_natural([1.0], 1.0, 0.1))
            assert np.isfinite(res.objective_value)

    def test_non_finite_init(self):
        with pytest.raises(InputError):
            calibrate(lambda th: -math.inf, OptimizerConfig(), np.zeros(3))

    def test_budget_exhausted_flag(self):
        res = calibrate(quadratic(self.C), OptimizerConfig(method="nelder-mead", max_iters=3), np.zeros(3))
        assert not res.converged

    def test_gp_recovers_lengthscale(self):
        true = KernelParams.from_natural([1.5], 1.0, 0.1)
        estimates = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            X = rng.uniform(0, 10, (60, 1))
            C = gram_matrix(SE1, true, X) + 0.01 * np.eye(60)
            y = np.linalg.cholesky(C) @ rng.standard_normal(60)

            def obj(th, X=X, y=y):
                return gp_log_marginal(SE1, KernelParams.from_vector(th, 1), X, y)

            res = calibrate(obj, OptimizerConfig(), KernelParams.from_natural([1.0], 1.0, 0.3))
            # the optimizer must reach the best of a multi-start Nelder-Mead search
            starts = np.random.default_rng(100).normal([0, 0, -1.5], 0.7, size=(4, 3))
            best = max(calibrate(obj, OptimizerConfig(method="nelder-mead"), s).objective_value for s in starts)
            assert res.objective_value >= best - 1e-4
            estimates.append(res.theta_vector[0])
        # per-seed MLE spread is ~0.26 in log-lengthscale at n=60
        assert abs(np.median(estimates) - math.log(1.5)) < 0.3
        assert np.mean(np.abs(np.array(estimates) - math.log(1.5)) < 0.3) >= 0.7


class TestInternals:
    def test_fd_gradient_against_oracle(self):
        rng = np.random.default_rng(30)
        X = rng.normal(size=(15, 2))
        y = (X[:, 0] > 0).astype(float)
        obj = CalibrationObjective("gpc", SE2, X, y)
        for _ in range(20):
            th = rng.normal([0, 0, -1], 0.3)
            g = fd_gradient(obj, th, 1e-5)
            # fourth-order five-point stencil as an independent oracle
            h = 1e-3
            oracle = np.empty(3)
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                oracle[j] = (-obj(th + 2 * e) + 8 * obj(th + e) - 8 * obj(th - e) + obj(th - 2 * e)) / (12 * h)
            np.testing.assert_allclose(g, oracle, rtol=1e-4, atol=1e-7)

    def test_kf_full_batch_equals_full_objective(self):
        rng = np.random.default_rng(31)
        X = rng.normal(size=(20, 2))
        y = (X[:, 0] > 0).astype(float)
        for kind, r in (("gpc", None), ("kpcr", 3)):
            obj = CalibrationObjective(kind, SE2, X, y, r=r)
            th = np.array([0.2, 0.0, -1.0])
            assert obj.subset(np.arange(20))(th) == obj(th)

    def test_objective_validation(self):
        with pytest.raises(InputError):
            CalibrationObjective("gpc", SE2, np.zeros((3, 2)), [0, 1, 2])
        with pytest.raises(InputError):
            CalibrationObjective("kpcr", SE2, np.zeros((3, 2)), [0, 1, 1])
        with pytest.raises(InputError):
            CalibrationObjective("gpc", SE2, np.zeros((3, 2)), [0, 1, 1], r=2)

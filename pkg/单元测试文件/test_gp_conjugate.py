"""
gp_conjugate 单元测试
"""
import os
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from core.kernels import gram, linear_kernel, se_kernel, laplace_kernel, sum_kernel, project_kernel, PSD_TOLERANCE
from core.summaries import posterior_projection as project_draws
from core.gp_conjugate import (
    GaussianLaw,
    GpFit,
    posterior_at_design,
    posterior_projection,
    projection_matrix,
    predict,
    credible_interval,
    projection_precision_gap,
    fit_summary,
)


@pytest.fixture
def random_problem():
    """N=10, P=2 的随机回归问题"""
    rng = np.random.default_rng(11)
    X = rng.standard_normal((10, 2))
    y = np.sin(X[:, 0]) + 0.3 * rng.standard_normal(10)
    return X, y


class TestGpFit:
    """测试回归问题的参数检查"""

    def test_invalid_alpha(self):
        with pytest.raises(ValueError):
            GpFit(se_kernel(), np.ones((3, 1)), np.ones(3), alpha=0.0)
        with pytest.raises(ValueError):
            GpFit(se_kernel(), np.ones((3, 1)), np.ones(3), alpha=1.5)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            GpFit(se_kernel(), np.ones((3, 1)), np.ones(4))

    def test_effective_noise(self):
        fit = GpFit(se_kernel(), np.ones((3, 1)), np.ones(3), noise_sd=2.0, alpha=0.25)
        assert fit.effective_noise_var == pytest.approx(16.0)


class TestPosteriorAtDesign:
    """测试设计点处的后验"""

    def test_zero_kernel(self):
        """测试空 sum 核（K=0）下后验退化到零函数"""
        X = np.arange(4.0).reshape(-1, 1)
        law = posterior_at_design(GpFit(sum_kernel([]), X, np.array([1.0, -2.0, 3.0, 0.5])))
        assert_allclose(law.mean, 0.0)
        assert_allclose(law.covariance, 0.0)

    def test_scalar_case(self):
        """测试 N=1、K=[1]、Y=[2] 时均值 1、方差 0.5"""
        law = posterior_at_design(GpFit(se_kernel(1.0), np.array([[0.0]]), np.array([2.0])))
        assert law.mean[0] == pytest.approx(1.0)
        assert law.covariance[0, 0] == pytest.approx(0.5)

    def test_dense_conditioning_oracle(self):
        """测试 100 个随机小问题（N=1..12，多种核）与联合高斯 (Y, mu) 直接条件化的结果一致"""
        kernels = [
            se_kernel(0.8),
            laplace_kernel(),
            linear_kernel(2.0),
            sum_kernel([linear_kernel(2.0), se_kernel(1.0)]),
            sum_kernel([laplace_kernel(0.5), se_kernel(0.3, amplitude=2.0)]),
        ]
        rng = np.random.default_rng(70)
        for instance in range(100):
            n = 1 if instance < 5 else int(rng.integers(1, 13))
            p = int(rng.integers(1, 4))
            X = rng.standard_normal((n, p))
            y = rng.standard_normal(n)
            noise_sd = float(rng.uniform(0.3, 2.0))
            spec = kernels[instance % len(kernels)]
            law = posterior_at_design(GpFit(spec, X, y, noise_sd=noise_sd))

            K = gram(spec, X)
            joint_yy = K + noise_sd ** 2 * np.eye(n)
            mean = K @ np.linalg.solve(joint_yy, y)
            covariance = K - K @ np.linalg.solve(joint_yy, K)
            assert np.max(np.abs(law.mean - mean)) < 1e-8, instance
            assert np.max(np.abs(law.covariance - covariance)) < 1e-8, instance

    @pytest.mark.parametrize("seed", range(40))
    def test_unit_noise_covariance_identity(self, seed):
        """测试 v=1 时后验协方差 K - K(K+I)^{-1}K = K(K+I)^{-1} = I - (K+I)^{-1}，含秩亏核"""
        rng = np.random.default_rng(1000 + seed)
        p = int(rng.integers(1, 4))
        n = int(rng.integers(p + 1, 51))
        X = rng.standard_normal((n, p))
        kind = seed % 4
        if kind == 0:
            spec = se_kernel(float(rng.uniform(0.3, 2.0)))
        elif kind == 1:
            spec = laplace_kernel()
        elif kind == 2:
            # P < N，K = XX^T 秩亏
            spec = linear_kernel(1.0)
        else:
            spec = project_kernel(se_kernel(1.0), X)
        K = gram(spec, X)
        law = posterior_at_design(GpFit(spec, X, rng.standard_normal(n)))

        shifted = K + np.eye(n)
        conditioned = K - K @ np.linalg.solve(shifted, K)
        complement = np.eye(n) - np.linalg.inv(shifted)
        assert np.max(np.abs(law.covariance - conditioned)) < 1e-8
        assert np.max(np.abs(law.covariance - complement)) < 1e-8
        assert np.max(np.abs(K @ np.linalg.inv(shifted) - complement)) < 1e-8

    def test_fractional_identity(self, random_problem):
        """测试 alpha 次幂后验等于噪声标准差 sigma/sqrt(alpha) 的标准后验"""
        X, y = random_problem
        spec = laplace_kernel()
        tempered = posterior_at_design(GpFit(spec, X, y, noise_sd=1.2, alpha=0.5))
        standard = posterior_at_design(GpFit(spec, X, y, noise_sd=1.2 / np.sqrt(0.5), alpha=1.0))
        assert_allclose(tempered.mean, standard.mean, atol=1e-12)
        assert_allclose(tempered.covariance, standard.covariance, atol=1e-12)

    def test_covariance_symmetric_psd(self, random_problem):
        X, y = random_problem
        law = posterior_at_design(GpFit(se_kernel(0.5), X, y))
        assert np.array_equal(law.covariance, law.covariance.T)
        eigenvalues = np.linalg.eigvalsh(law.covariance)
        assert eigenvalues[0] >= -PSD_TOLERANCE * eigenvalues[-1]


class TestPosteriorProjection:
    """测试投影参数 beta* 的后验"""

    def test_zero_response(self, random_problem):
        X, _ = random_problem
        law = posterior_projection(GpFit(se_kernel(), X, np.zeros(10)))
        assert_allclose(law.mean, 0.0, atol=1e-14)

    def test_linear_kernel_matches_ridge(self):
        """测试纯线性核下 beta* 的后验均值等于岭估计"""
        rng = np.random.default_rng(12)
        X = rng.standard_normal((20, 3))
        y = X @ np.array([1.0, -0.5, 2.0]) + rng.standard_normal(20)
        sigma_beta_sq = 3.0
        law = posterior_projection(GpFit(linear_kernel(sigma_beta_sq), X, y))
        ridge = np.linalg.solve(X.T @ X + np.eye(3) / sigma_beta_sq, X.T @ y)
        assert np.max(np.abs(law.mean - ridge)) < 1e-8

    def test_linear_kernel_covariance_matches_conjugate(self):
        """测试纯线性核下 beta* 的后验协方差等于 (X^T X + I/sigma_beta^2)^{-1}"""
        rng = np.random.default_rng(13)
        X = rng.standard_normal((15, 2))
        y = rng.standard_normal(15)
        law = posterior_projection(GpFit(linear_kernel(5.0), X, y))
        expected = np.linalg.inv(X.T @ X + np.eye(2) / 5.0)
        assert np.max(np.abs(law.covariance - expected)) < 1e-8

    def test_rank_deficient(self):
        X = np.column_stack([np.ones(5), 2 * np.ones(5)])
        with pytest.raises(ValueError):
            posterior_projection(GpFit(se_kernel(), X, np.arange(5.0)))

    def test_projection_matrix_left_inverse(self, random_problem):
        X, _ = random_problem
        assert_allclose(projection_matrix(X) @ X, np.eye(2), atol=1e-12)

    def test_matches_linear_map_of_design_posterior(self, random_problem):
        """测试 beta* 的后验等于 B mu 的后验：均值 B m，协方差 B S B^T"""
        X, y = random_problem
        fit = GpFit(sum_kernel([linear_kernel(2.0), se_kernel(0.7)]), X, y, noise_sd=0.8, alpha=0.6)
        law = posterior_projection(fit)
        design_law = posterior_at_design(fit)
        B = projection_matrix(X)
        assert np.max(np.abs(law.mean - B @ design_law.mean)) < 1e-10
        assert np.max(np.abs(law.covariance - B @ design_law.covariance @ B.T)) < 1e-10

    def test_monte_carlo_projection_of_draws(self, random_problem):
        """测试逐次投影设计点后验抽样得到的 beta* 与闭式后验的均值、方差一致"""
        X, y = random_problem
        fit = GpFit(sum_kernel([linear_kernel(1.0), se_kernel(1.0)]), X, y, noise_sd=0.5)
        law = posterior_projection(fit)
        draws = posterior_at_design(fit).sample(np.random.default_rng(14), 4000)
        beta_star = project_draws(draws, X).beta_star

        se = np.sqrt(np.diag(law.covariance) / 4000)
        assert np.all(np.abs(beta_star.mean(axis=0) - law.mean) < 4 * se)
        # 样本方差的相对标准误约 sqrt(2/4000)
        assert_allclose(beta_star.var(axis=0, ddof=1), np.diag(law.covariance), rtol=0.12)


class TestPredict:
    """测试后验预测"""

    def test_in_sample_matches_design_posterior(self, random_problem):
        X, y = random_problem
        fit = GpFit(se_kernel(0.8), X, y, noise_sd=0.5)
        a, b = predict(fit, X), posterior_at_design(fit)
        assert_allclose(a.mean, b.mean, atol=1e-10)
        assert_allclose(a.covariance, b.covariance, atol=1e-10)

    def test_empty_query(self, random_problem):
        X, y = random_problem
        law = predict(GpFit(se_kernel(), X, y), np.zeros((0, 2)))
        assert law.dim == 0

    def test_far_query_reverts_to_prior(self, random_problem):
        """测试远离训练点的查询：均值趋于 0，方差趋于先验方差"""
        X, y = random_problem
        law = predict(GpFit(se_kernel(1.0), X, y), np.array([[50.0, -50.0]]))
        assert abs(law.mean[0]) < 1e-10
        assert law.covariance[0, 0] == pytest.approx(1.0, abs=1e-10)

    def test_dimension_mismatch(self, random_problem):
        X, y = random_problem
        with pytest.raises(ValueError):
            predict(GpFit(se_kernel(), X, y), np.zeros((2, 3)))


class TestCredibleInterval:
    """测试可信区间"""

    def test_standard_normal(self):
        lower, upper = credible_interval(GaussianLaw([0.0], [[1.0]]), 0, 0.95)
        assert lower == pytest.approx(-1.959964, abs=1e-6)
        assert upper == pytest.approx(1.959964, abs=1e-6)

    def test_degenerate(self):
        assert credible_interval(GaussianLaw([3.0], [[0.0]]), 0) == (3.0, 3.0)

    def test_scaled(self):
        lower, upper = credible_interval(GaussianLaw([2.0], [[4.0]]), 0, 0.95)
        assert lower == pytest.approx(2 - 2 * 1.959964, abs=1e-5)
        assert upper == pytest.approx(2 + 2 * 1.959964, abs=1e-5)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            credible_interval(GaussianLaw([0.0, 1.0], np.eye(2)), 2)

    def test_invalid_level(self):
        with pytest.raises(ValueError):
            credible_interval(GaussianLaw([0.0], [[1.0]]), 0, 1.0)


class TestGaussianLaw:
    """测试高斯分布抽样"""

    def test_sample_moments(self):
        rng = np.random.default_rng(14)
        covariance = np.array([[2.0, 0.6], [0.6, 1.0]])
        draws = GaussianLaw([1.0, -1.0], covariance).sample(rng, 20000)
        assert draws.shape == (20000, 2)
        assert_allclose(draws.mean(axis=0), [1.0, -1.0], atol=0.05)
        assert_allclose(np.cov(draws.T), covariance, atol=0.08)

    def test_indefinite_rejected(self):
        with pytest.raises(ValueError):
            GaussianLaw([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]]).sample(np.random.default_rng(0))

    def test_degenerate_direction_stays_in_support(self):
        """测试秩 1 协方差的样本严格落在支撑直线上"""
        v = np.array([1.0, 2.0])
        draws = GaussianLaw(np.zeros(2), np.outer(v, v)).sample(np.random.default_rng(1), 50)
        orthogonal = np.array([2.0, -1.0])
        assert np.max(np.abs(draws @ orthogonal)) < 1e-10


class TestPrecisionGap:
    """测试 X^T X/(1+cN) - X^T (K+I)^{-1} X 半正定"""

    def test_psd_for_linear_plus_se(self):
        rng = np.random.default_rng(15)
        for n in (20, 60):
            X = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
            sigma_beta_sq = 100.0
            spec = sum_kernel([linear_kernel(sigma_beta_sq), se_kernel(1.0)])
            gap = projection_precision_gap(spec, X, sigma_beta_sq)
            eigenvalues = np.linalg.eigvalsh(gap)
            scale = max(1.0, float(np.max(np.abs(np.linalg.eigvalsh(X.T @ X)))))
            assert eigenvalues[0] >= -1e-8 * scale


class TestFitSummary:
    """测试投影参数摘要"""

    def test_summary_fields(self, random_problem):
        X, y = random_problem
        summary = fit_summary(GpFit(se_kernel(), X, y), index=1, truth=0.0)
        assert set(summary) == {"mean", "variance", "lower", "upper", "covered"}
        assert summary["lower"] <= summary["mean"] <= summary["upper"]
        assert summary["covered"] in (0.0, 1.0)

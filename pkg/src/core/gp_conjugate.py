"""
共轭高斯过程回归
已知噪声尺度、分数后验指数下的闭式后验，以及投影参数 beta* 的后验
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, stats

from .kernels import KernelSpec, gram, cross_gram, stable_cholesky, PSD_TOLERANCE

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    """有限维高斯分布（均值向量、协方差矩阵）"""
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        covariance = np.asarray(self.covariance, dtype=float).reshape(mean.size, mean.size)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", covariance)

    @property
    def dim(self) -> int:
        return self.mean.size

    def marginal_sd(self) -> np.ndarray:
        """各坐标的边际标准差（负的舍入误差截断为 0）"""
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """
        抽样

        使用特征分解，协方差退化（如投影核先验）时样本严格落在支撑子空间内。

        Args:
            rng: 随机数生成器
            size: 样本数

        Returns:
            size×D 的样本矩阵
        """
        if self.dim == 0:
            return np.zeros((size, 0))
        eigenvalues, eigenvectors = linalg.eigh(self.covariance)
        scale = max(float(np.max(np.abs(eigenvalues))), 1.0)
        if eigenvalues[0] < -PSD_TOLERANCE * scale:
            raise ValueError(f"协方差矩阵不是半正定的: 最小特征值 {eigenvalues[0]:.3e}")
        # 相对谱范数低于容差的特征值视为数值零
        spectral = float(np.max(np.abs(eigenvalues)))
        eigenvalues = np.where(eigenvalues > PSD_TOLERANCE * spectral, eigenvalues, 0.0)
        factor = eigenvectors * np.sqrt(eigenvalues)
        z = rng.standard_normal((size, self.dim))
        return self.mean + z @ factor.T


@dataclass(frozen=True, eq=False)
class GpFit:
    """
    高斯过程回归问题

    Attributes:
        kernel: 先验核
        design: N×P 设计矩阵
        targets: 长度 N 的响应
        noise_sd: 噪声标准差 sigma
        alpha: 分数后验指数，取值 (0, 1]
    """
    kernel: KernelSpec
    design: np.ndarray
    targets: np.ndarray
    noise_sd: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        design = np.asarray(self.design, dtype=float)
        if design.ndim == 1:
            design = design.reshape(-1, 1)
        targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if design.shape[0] < 1:
            raise ValueError("至少需要一个观测")
        if design.shape[0] != targets.size:
            raise ValueError(f"设计矩阵行数 {design.shape[0]} 与响应长度 {targets.size} 不一致")
        if not self.noise_sd > 0:
            raise ValueError(f"噪声标准差必须为正: {self.noise_sd}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"分数指数 alpha 必须在 (0, 1] 内: {self.alpha}")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "targets", targets)

    @property
    def effective_noise_var(self) -> float:
        """alpha 次幂的高斯似然等价于方差 sigma^2/alpha 的高斯似然"""
        return (self.noise_sd / np.sqrt(self.alpha)) ** 2


def _factor_system(fit: GpFit) -> Tuple[np.ndarray, np.ndarray, float]:
    """返回 (K, chol(K + vI), v)"""
    K = gram(fit.kernel, fit.design)
    v = fit.effective_noise_var
    L = stable_cholesky(K + v * np.eye(K.shape[0]), "K + vI")
    return K, L, v


def posterior_at_design(fit: GpFit) -> GaussianLaw:
    """
    设计点处函数值 mu = (mu(X_1), ..., mu(X_N)) 的后验

    均值 K(K+vI)^{-1}Y，协方差 v K(K+vI)^{-1}，其中 v = sigma^2/alpha。

    Args:
        fit: 回归问题

    Returns:
        N 维高斯分布
    """
    K, L, v = _factor_system(fit)
    # S = (K + vI)^{-1} K
    S = linalg.cho_solve((L, True), K, check_finite=False)
    mean = K @ linalg.cho_solve((L, True), fit.targets, check_finite=False)
    covariance = v * S
    covariance = (covariance + covariance.T) / 2.0
    return GaussianLaw(mean, covariance)


def projection_matrix(X: np.ndarray) -> np.ndarray:
    """
    B = (X^T X)^{-1} X^T

    Raises:
        ValueError: X 列秩亏
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise ValueError(f"设计矩阵秩亏: rank(X) = {rank} < P = {X.shape[1]}")
    return np.linalg.solve(X.T @ X, X.T)


def posterior_projection(fit: GpFit) -> GaussianLaw:
    """
    投影参数 beta* = argmin ||mu - X beta|| 的后验

    均值 B K(K+vI)^{-1} Y，协方差 B [v K(K+vI)^{-1}] B^T。

    Args:
        fit: 回归问题（设计矩阵须列满秩）

    Returns:
        P 维高斯分布
    """
    B = projection_matrix(fit.design)
    law = posterior_at_design(fit)
    covariance = B @ law.covariance @ B.T
    return GaussianLaw(B @ law.mean, (covariance + covariance.T) / 2.0)


def predict(fit: GpFit, X_new: np.ndarray) -> GaussianLaw:
    """
    新点处 mu(X_new) 的后验预测分布

    Args:
        fit: 回归问题
        X_new: M×P 新点

    Returns:
        M 维高斯分布
    """
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new.reshape(-1, fit.design.shape[1])
    if X_new.shape[1] != fit.design.shape[1]:
        raise ValueError(f"维度不匹配: 训练设计 {fit.design.shape[1]} 列，新点 {X_new.shape[1]} 列")
    if X_new.shape[0] == 0:
        return GaussianLaw(np.zeros(0), np.zeros((0, 0)))

    _, L, _ = _factor_system(fit)
    K_cross = cross_gram(fit.kernel, fit.design, X_new)
    K_new = gram(fit.kernel, X_new)
    mean = K_cross @ linalg.cho_solve((L, True), fit.targets, check_finite=False)
    W = linalg.solve_triangular(L, K_cross.T, lower=True, check_finite=False)
    covariance = K_new - W.T @ W
    return GaussianLaw(mean, (covariance + covariance.T) / 2.0)


def sample_prior(kernel: KernelSpec, X: np.ndarray, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """GP(0, kernel) 在设计点处的先验抽样，返回 size×N"""
    K = gram(kernel, X)
    return GaussianLaw(np.zeros(K.shape[0]), K).sample(rng, size)


def credible_interval(law: GaussianLaw, index: int, level: float = 0.95) -> Tuple[float, float]:
    """
    指定坐标的等尾可信区间 mean ± z_{(1+level)/2} sd

    Args:
        law: 高斯分布
        index: 坐标下标
        level: 可信水平，取值 (0, 1)

    Returns:
        (下界, 上界)
    """
    if not 0 < level < 1:
        raise ValueError(f"可信水平必须在 (0, 1) 内: {level}")
    if not 0 <= index < law.dim:
        raise IndexError(f"坐标下标越界: {index}（维度 {law.dim}）")
    center = float(law.mean[index])
    sd = float(law.marginal_sd()[index])
    if sd == 0.0:
        return center, center
    half_width = stats.norm.ppf((1.0 + level) / 2.0) * sd
    return center - half_width, center + half_width


def projection_precision_gap(kernel: KernelSpec, X: np.ndarray, sigma_beta_sq: float) -> np.ndarray:
    """
    X^T X/(1+cN) - X^T (K+I)^{-1} X，c = sigma_beta^2 * lambda_min(X^T X / N)

    对线性项系数为 sigma_beta^2 的核，该矩阵应半正定。
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    K = gram(kernel, X)
    L = stable_cholesky(K + np.eye(n), "K + I")
    xtx = X.T @ X
    c = sigma_beta_sq * float(linalg.eigvalsh(xtx / n)[0])
    inner = X.T @ linalg.cho_solve((L, True), X, check_finite=False)
    gap = xtx / (1.0 + c * n) - inner
    return (gap + gap.T) / 2.0


def fit_summary(fit: GpFit, index: int = 0, level: float = 0.95, truth: Optional[float] = None) -> dict:
    """投影参数第 index 个坐标的后验摘要（均值、方差、区间，给定真值时含覆盖指示）"""
    law = posterior_projection(fit)
    lower, upper = credible_interval(law, index, level)
    summary = {
        "mean": float(law.mean[index]),
        "variance": float(law.covariance[index, index]),
        "lower": lower,
        "upper": upper,
    }
    if truth is not None:
        summary["covered"] = float(lower <= truth <= upper)
    return summary

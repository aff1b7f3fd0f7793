"""
后验投影摘要
线性投影与摘要 R²、概率拟合的 KL 投影、残差上的贪心 CART 诊断
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import expit, log_expit, xlogy

from .trees import Branch, Leaf, TreeNode, tree_predict, render_text as _render_text, render_dot as _render_dot

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """牛顿迭代未收敛或发散；last_iterate 为最后一次迭代值"""

    def __init__(self, message: str, last_iterate: np.ndarray):
        super().__init__(message)
        self.last_iterate = np.asarray(last_iterate, dtype=float)


@dataclass(frozen=True, eq=False)
class ProjectionSummary:
    """
    线性投影摘要

    Attributes:
        beta_star: 投影系数 (X^T X)^{-1} X^T mu
        r_squared: 1 - SSE / sum (mu_i - mean(mu))^2
        sse: sum (mu_i - X_i^T beta*)^2
    """
    beta_star: np.ndarray
    r_squared: float
    sse: float


class LinearProjector:
    """
    对同一设计矩阵反复做最小二乘投影，缓存 X 的 QR 分解

    Args:
        X: N×P 设计矩阵，要求 N > P 且列满秩
    """

    def __init__(self, X: np.ndarray):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        n, p = X.shape
        if n <= p:
            raise ValueError(f"线性投影需要 N > P: N={n}, P={p}")
        rank = np.linalg.matrix_rank(X)
        if rank < p:
            raise ValueError(f"设计矩阵秩亏: rank(X) = {rank} < P = {p}")
        self.X = X
        self.Q, self.R = linalg.qr(X, mode="economic")

    def coefficients(self, mu: np.ndarray) -> np.ndarray:
        """mu 可以是长度 N 的向量，也可以是 draws×N 矩阵"""
        mu = np.asarray(mu, dtype=float)
        rhs = self.Q.T @ mu.T
        return linalg.solve_triangular(self.R, rhs, lower=False).T

    def project(self, mu: np.ndarray) -> ProjectionSummary:
        """
        单个函数 mu 的投影摘要

        Raises:
            ValueError: 长度不匹配，或 mu 为常数（总平方和为 0，R² 无定义）
        """
        mu = np.asarray(mu, dtype=float).reshape(-1)
        if mu.size != self.X.shape[0]:
            raise ValueError(f"mu 长度 {mu.size} 与设计矩阵行数 {self.X.shape[0]} 不一致")
        total_ss = float(np.sum((mu - mu.mean()) ** 2))
        if total_ss <= 0.0:
            raise ValueError("mu 为常数，总平方和为 0，摘要 R² 无定义")
        beta_star = self.coefficients(mu)
        resid = mu - self.X @ beta_star
        sse = float(resid @ resid)
        return ProjectionSummary(beta_star, 1.0 - sse / total_ss, sse)

    def r_squared_or_nan(self, mu: np.ndarray) -> float:
        """mu 为常数时返回 NaN 而不是报错"""
        mu = np.asarray(mu, dtype=float).reshape(-1)
        total_ss = float(np.sum((mu - mu.mean()) ** 2))
        if total_ss <= 0.0:
            return float("nan")
        resid = mu - self.X @ self.coefficients(mu)
        return 1.0 - float(resid @ resid) / total_ss


def linear_projection(mu: np.ndarray, X: np.ndarray) -> ProjectionSummary:
    """
    mu 到 X 列空间的最小二乘投影

    Args:
        mu: 长度 N 的拟合函数值
        X: N×P 设计矩阵

    Returns:
        投影摘要 (beta*, R², SSE)
    """
    return LinearProjector(X).project(mu)


@dataclass
class PosteriorProjection:
    """
    后验抽样的逐次投影与后验均值函数的整体投影

    Attributes:
        beta_star: draws×P
        r_squared: 每次抽样的摘要 R²（常数抽样为 NaN）
        sse: 每次抽样的 SSE
        overall: 后验均值函数的投影摘要
    """
    beta_star: np.ndarray
    r_squared: np.ndarray
    sse: np.ndarray
    overall: ProjectionSummary

    def __len__(self) -> int:
        return int(self.beta_star.shape[0])


def posterior_projection(mu_draws: np.ndarray, X: np.ndarray) -> PosteriorProjection:
    """
    对每次抽样做线性投影，同时给出后验均值函数的整体摘要

    Args:
        mu_draws: draws×N 样本内函数值
        X: N×P 设计矩阵

    Returns:
        逐次与整体投影摘要
    """
    mu_draws = np.atleast_2d(np.asarray(mu_draws, dtype=float))
    projector = LinearProjector(X)
    if mu_draws.shape[1] != projector.X.shape[0]:
        raise ValueError(f"mu 抽样列数 {mu_draws.shape[1]} 与设计矩阵行数 {projector.X.shape[0]} 不一致")

    beta_star = projector.coefficients(mu_draws)
    resid = mu_draws - beta_star @ projector.X.T
    sse = np.sum(resid ** 2, axis=1)
    total_ss = np.sum((mu_draws - mu_draws.mean(axis=1, keepdims=True)) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_squared = np.where(total_ss > 0, 1.0 - sse / np.where(total_ss > 0, total_ss, 1.0), np.nan)
    degenerate = int(np.sum(total_ss <= 0))
    if degenerate:
        logger.warning(f"{degenerate} 次抽样的 mu 为常数，对应 R² 记为 NaN")

    overall = projector.project(mu_draws.mean(axis=0))
    return PosteriorProjection(beta_star, r_squared, sse, overall)


def _kl_objective(beta: np.ndarray, X: np.ndarray, mu: np.ndarray) -> float:
    eta = X @ beta
    return float(np.sum(xlogy(mu, mu) - mu * log_expit(eta)
                        + xlogy(1.0 - mu, 1.0 - mu) - (1.0 - mu) * log_expit(-eta)))


def kl_projection_logistic(probabilities: np.ndarray, X: np.ndarray, tol: float = 1e-10,
                           max_iter: int = 100, max_norm: float = 1e4) -> np.ndarray:
    """
    拟合概率到 logistic 子模型的 KL 投影

    最小化 sum mu log(mu/p) + (1-mu) log((1-mu)/(1-p))，p = expit(X beta)。
    梯度 X^T (p - mu)，Hessian X^T W X，W = p(1-p)；牛顿步不下降时步长减半。

    Args:
        probabilities: 长度 N，严格在 (0, 1) 内
        X: N×P 设计矩阵，列满秩
        tol: 梯度无穷范数的收敛阈值
        max_iter: 最大牛顿步数
        max_norm: ||beta||_inf 超过该值视为类分离式发散

    Returns:
        beta*

    Raises:
        ValueError: 概率越界或 X 秩亏
        ConvergenceError: 未在 max_iter 步内收敛或发散
    """
    mu = np.asarray(probabilities, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if mu.size != X.shape[0]:
        raise ValueError(f"概率长度 {mu.size} 与设计矩阵行数 {X.shape[0]} 不一致")
    if np.any(mu <= 0.0) or np.any(mu >= 1.0) or not np.all(np.isfinite(mu)):
        raise ValueError("拟合概率必须严格位于 (0, 1) 内")
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise ValueError(f"设计矩阵秩亏: rank(X) = {rank} < P = {X.shape[1]}")

    beta = np.zeros(X.shape[1])
    objective = _kl_objective(beta, X, mu)
    for iteration in range(max_iter + 1):
        p = expit(X @ beta)
        gradient = X.T @ (p - mu)
        if np.max(np.abs(gradient)) < tol:
            logger.debug(f"KL 投影在第 {iteration} 步收敛")
            return beta
        if iteration == max_iter:
            break
        hessian = X.T @ (X * (p * (1.0 - p))[:, None])
        try:
            step = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError as e:
            raise ConvergenceError(f"Hessian 奇异: {e}", beta) from e

        t = 1.0
        for _ in range(60):
            candidate = beta - t * step
            value = _kl_objective(candidate, X, mu)
            if value <= objective:
                break
            t /= 2.0
        beta, objective = candidate, value
        if np.max(np.abs(beta)) > max_norm:
            raise ConvergenceError(f"KL 投影发散: ||beta||_inf 超过 {max_norm}（类分离）", beta)

    raise ConvergenceError(f"KL 投影在 {max_iter} 步内未收敛", beta)


@dataclass(frozen=True)
class CartSummary:
    """
    残差 CART 树

    Attributes:
        root: 树根，叶子值为落入该叶的残差均值
        depth_limit: 最大深度
        min_leaf: 叶子最少样本数
        leaf_sizes: 按深度优先顺序的叶子样本数
    """
    root: TreeNode
    depth_limit: int
    min_leaf: int
    leaf_sizes: Tuple[int, ...] = field(default=())

    def render_text(self, columns: Optional[Sequence[str]] = None) -> str:
        return _render_text(self.root, columns)

    def render_dot(self, columns: Optional[Sequence[str]] = None) -> str:
        return _render_dot(self.root, columns, self.leaf_sizes or None)


def _best_split(residuals: np.ndarray, X: np.ndarray, min_leaf: int) -> Tuple[Optional[int], float, float]:
    """
    穷举各变量排序后相邻不同取值的中点，返回平方误差下降最大的 (变量, 切分点, 下降量)

    严格大于才替换当前最优，并列时保留变量下标与切分点更小者。
    """
    n = residuals.size
    total = residuals.sum()
    base = total * total / n
    best_var, best_cut, best_gain = None, 0.0, 0.0
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="mergesort")
        xs = X[order, j]
        left_sum = np.cumsum(residuals[order])[:-1]
        left_n = np.arange(1, n)
        right_sum = total - left_sum
        right_n = n - left_n
        valid = (xs[:-1] < xs[1:]) & (left_n >= min_leaf) & (right_n >= min_leaf)
        if not np.any(valid):
            continue
        gains = left_sum ** 2 / left_n + right_sum ** 2 / right_n - base
        gains = np.where(valid, gains, -np.inf)
        k = int(np.argmax(gains))
        if gains[k] > best_gain:
            best_var, best_cut, best_gain = j, 0.5 * (xs[k] + xs[k + 1]), float(gains[k])
    return best_var, best_cut, best_gain


def cart_residual_fit(residuals: np.ndarray, X: np.ndarray, depth_limit: int = 3, min_leaf: int = 10) -> CartSummary:
    """
    对残差做贪心二叉 CART 拟合

    Args:
        residuals: 长度 N 的残差，例如 mu_hat - X beta*
        X: N×P 预测变量
        depth_limit: 最大深度
        min_leaf: 叶子最少样本数

    Returns:
        CART 摘要

    Raises:
        ValueError: N < 2·min_leaf 或参数非法
    """
    r = np.asarray(residuals, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if r.size != X.shape[0]:
        raise ValueError(f"残差长度 {r.size} 与设计矩阵行数 {X.shape[0]} 不一致")
    if depth_limit < 0 or min_leaf < 1:
        raise ValueError(f"需要 depth_limit >= 0 且 min_leaf >= 1: {depth_limit}, {min_leaf}")
    if r.size < 2 * min_leaf:
        raise ValueError(f"样本数 {r.size} 小于 2·min_leaf = {2 * min_leaf}")

    sizes: List[int] = []

    def grow(rows: np.ndarray, depth: int) -> TreeNode:
        values = r[rows]
        mean = float(values.mean())
        if depth < depth_limit and rows.size >= 2 * min_leaf:
            node_ss = float(np.sum((values - mean) ** 2))
            var, cut, gain = _best_split(values, X[rows], min_leaf)
            if var is not None and gain > 1e-12 * max(node_ss, np.finfo(float).tiny):
                goes_left = X[rows, var] < cut
                left = grow(rows[goes_left], depth + 1)
                right = grow(rows[~goes_left], depth + 1)
                return Branch(var, float(cut), left, right)
        sizes.append(int(rows.size))
        return Leaf(mean)

    root = grow(np.arange(r.size), 0)
    logger.info(f"残差 CART 完成: {len(sizes)} 个叶子, depth_limit={depth_limit}, min_leaf={min_leaf}")
    return CartSummary(root, depth_limit, min_leaf, tuple(sizes))


def cart_predict(summary: CartSummary, X: np.ndarray) -> np.ndarray:
    """CART 摘要在新点处的分段常数预测"""
    return tree_predict(summary.root, X)

"""
广义 BART 采样器
mu(x) = x^T beta + sum_t g(x; T_t, M_t)：分支过程树先验、高斯叶子先验、共轭线性部分
"""
import time
import logging
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy import linalg, stats
from tqdm import tqdm

from .chain import McmcChain
from .dataset import Dataset
from .summaries import LinearProjector
from .trees import (
    Branch, Leaf, LeafCell, TreeNode, count_leaves, count_prunable, partition, prunable_paths,
    replace_at, tree_predict, with_leaf_values,
)
from .utils import format_time

logger = logging.getLogger(__name__)

__all__ = [
    "Leaf", "Branch", "TreeNode", "BartPrior", "GbartRunConfig", "GbartData", "GbartState",
    "prepare_gbart_data", "sample_tree_prior", "sample_forest_prior", "prior_all_empty_probability",
    "prior_check", "leaf_log_marginal", "tree_log_marginal", "tree_predict", "forest_predict",
    "is_all_empty", "gibbs_sweep", "fit_gbart", "initial_state",
]


@dataclass(frozen=True)
class BartPrior:
    """
    森林先验

    Attributes:
        num_trees: 树的棵数 T
        branch_a: 深度 0 的分支概率 a
        branch_b: 深度衰减指数 b，q(d) = a/(1+b)^d
        sigma_mu: 叶子尺度，叶子值 ~ N(0, sigma_mu^2/T)
    """
    num_trees: int = 200
    branch_a: float = 0.95
    branch_b: float = 2.0
    sigma_mu: float = 0.5

    def __post_init__(self):
        if self.num_trees < 0:
            raise ValueError(f"树的棵数不能为负: {self.num_trees}")
        if not 0.0 <= self.branch_a < 1.0:
            raise ValueError(f"branch_a 必须在 [0, 1) 内: {self.branch_a}")
        if self.branch_b < 0:
            raise ValueError(f"branch_b 不能为负: {self.branch_b}")
        if not self.sigma_mu > 0:
            raise ValueError(f"sigma_mu 必须为正: {self.sigma_mu}")

    def split_probability(self, depth: int) -> float:
        return self.branch_a / (1.0 + self.branch_b) ** depth

    @property
    def leaf_variance(self) -> float:
        return self.sigma_mu ** 2 / max(self.num_trees, 1)

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "BartPrior":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in config.items() if k in known})


@dataclass(frozen=True)
class GbartRunConfig:
    """
    运行设置

    linear_component 为假即 BART 基线；update_trees 为假时森林固定为全零叶子；
    fixed_sigma（原始尺度）给定时不更新噪声尺度。
    """
    iterations: int = 4000
    burn_in: int = 1000
    alpha: float = 1.0
    linear_component: bool = True
    store_mu: bool = False
    update_trees: bool = True
    fixed_sigma: Optional[float] = None
    sigma_nu: float = 3.0
    sigma_quantile: float = 0.9

    def __post_init__(self):
        if self.burn_in < 0 or self.iterations <= self.burn_in:
            raise ValueError(f"需要 0 <= burn_in < iterations: burn_in={self.burn_in}, iterations={self.iterations}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"分数指数 alpha 必须在 (0, 1] 内: {self.alpha}")
        if self.fixed_sigma is not None and not self.fixed_sigma > 0:
            raise ValueError(f"fixed_sigma 必须为正: {self.fixed_sigma}")
        if not self.sigma_nu > 0 or not 0 < self.sigma_quantile < 1:
            raise ValueError(f"噪声先验标定参数非法: nu={self.sigma_nu}, quantile={self.sigma_quantile}")

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "GbartRunConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in config.items() if k in known})


@dataclass
class GbartData:
    """
    采样器缓存：标准化响应、预测变量范围、噪声先验标定

    Attributes:
        X: N×P 设计矩阵
        y: 标准化到 [-0.5, 0.5] 的响应
        y_shift, y_scale: y_original = y_shift + y_scale * y
        ranges: P×2 每列 (最小值, 最大值)
        split_vars: 可用于分裂的列（非常数列）
        intercept_index: 全 1 列的下标
        linear_component: 是否包含线性部分
        sigma_hat: 标准化尺度上的最小二乘残差标准差
        sigma_nu, sigma_lambda: 噪声方差先验 InvGam(nu/2, nu*lambda/2)
    """
    X: np.ndarray
    y: np.ndarray
    y_shift: float
    y_scale: float
    ranges: np.ndarray
    split_vars: np.ndarray
    intercept_index: Optional[int]
    linear_component: bool
    sigma_hat: float
    sigma_nu: float
    sigma_lambda: float
    xtx_factor: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def prior_metadata(self) -> Dict[str, float]:
        return {
            "nu": self.sigma_nu,
            "lambda": self.sigma_lambda,
            "sigma_hat": self.sigma_hat,
            "y_shift": self.y_shift,
            "y_scale": self.y_scale,
        }


@dataclass(eq=False)
class GbartState:
    """
    森林状态（标准化尺度）

    Attributes:
        forest: T 棵树
        beta: 线性系数
        sigma: 噪声标准差
        y_shift, y_scale: 响应的仿射标准化
        tree_fits: T×N 每棵树在设计点处的取值缓存
    """
    forest: List[TreeNode]
    beta: np.ndarray
    sigma: float
    y_shift: float = 0.0
    y_scale: float = 1.0
    tree_fits: Optional[np.ndarray] = field(default=None, repr=False)


def _intercept_column(X: np.ndarray) -> Optional[int]:
    for j in range(X.shape[1]):
        if X.shape[0] > 0 and np.all(X[:, j] == 1.0):
            return j
    return None


def prepare_gbart_data(data: Dataset, linear_component: bool = True,
                       sigma_nu: float = 3.0, sigma_quantile: float = 0.9) -> GbartData:
    """
    标准化响应并标定噪声先验

    y 线性映射到 [-0.5, 0.5]；sigma^2 ~ InvGam(nu/2, nu lambda/2)，lambda 使
    P(sigma < sigma_hat) = sigma_quantile，sigma_hat 为最小二乘残差标准差。

    Raises:
        ValueError: N < P、X 秩亏，或包含线性部分时缺少截距列
    """
    X, y = data.X, data.y
    n, p = X.shape
    if n < 1:
        raise ValueError("至少需要一个观测")
    intercept_index = _intercept_column(X)
    if linear_component:
        if n < p:
            raise ValueError(f"需要 N >= P: N={n}, P={p}")
        rank = np.linalg.matrix_rank(X)
        if rank < p:
            raise ValueError(f"设计矩阵秩亏: rank(X) = {rank} < P = {p}")
        if intercept_index is None:
            raise ValueError("GBART 线性部分需要全 1 截距列")

    y_min, y_max = float(np.min(y)), float(np.max(y))
    y_shift = (y_min + y_max) / 2.0
    y_scale = y_max - y_min
    if y_scale <= 0:
        y_scale = 1.0
    y_std = (y - y_shift) / y_scale

    ranges = np.column_stack([X.min(axis=0), X.max(axis=0)])
    split_vars = np.flatnonzero(ranges[:, 1] > ranges[:, 0])
    if split_vars.size == 0:
        logger.warning("没有取值范围非零的预测变量，树无法分裂")

    xtx_factor = None
    if linear_component:
        xtx_factor = linalg.cholesky(X.T @ X, lower=False)
        beta = linalg.cho_solve((xtx_factor, False), X.T @ y_std)
        resid = y_std - X @ beta
        sigma_hat = float(np.sqrt(resid @ resid / (n - p))) if n > p else float(np.std(y_std))
    else:
        sigma_hat = float(np.std(y_std, ddof=1)) if n > 1 else 1.0
    if not sigma_hat > 1e-3:
        logger.warning(f"最小二乘残差标准差过小 ({sigma_hat:.3g})，噪声先验按 1e-3 标定")
        sigma_hat = 1e-3
    sigma_lambda = sigma_hat ** 2 * stats.chi2.ppf(1.0 - sigma_quantile, sigma_nu) / sigma_nu

    return GbartData(X, y_std, y_shift, y_scale, ranges, split_vars, intercept_index, linear_component,
                     sigma_hat, sigma_nu, float(sigma_lambda), xtx_factor)


def _eligible(predictor_ranges: Union[np.ndarray, Sequence]) -> np.ndarray:
    ranges = np.asarray(predictor_ranges, dtype=float).reshape(-1, 2)
    eligible = np.flatnonzero(ranges[:, 1] > ranges[:, 0])
    if eligible.size == 0:
        raise ValueError("至少需要一个取值范围非零的预测变量")
    return eligible


def sample_tree_prior(prior: BartPrior, predictor_ranges, rng: np.random.Generator) -> TreeNode:
    """
    从分支过程先验抽取一棵树

    深度 d 的节点以 q(d) 概率分裂；分裂变量在可用变量中均匀选取，切分点在该变量的取值范围内均匀；
    叶子值 ~ N(0, sigma_mu^2/T)。

    Args:
        prior: 森林先验
        predictor_ranges: P×2 的 (最小值, 最大值)
        rng: 随机数生成器
    """
    ranges = np.asarray(predictor_ranges, dtype=float).reshape(-1, 2)
    eligible = _eligible(ranges)
    leaf_sd = np.sqrt(prior.leaf_variance)

    def grow(depth: int) -> TreeNode:
        if rng.uniform() < prior.split_probability(depth):
            var = int(eligible[rng.integers(eligible.size)])
            cut = float(rng.uniform(ranges[var, 0], ranges[var, 1]))
            return Branch(var, cut, grow(depth + 1), grow(depth + 1))
        return Leaf(float(leaf_sd * rng.standard_normal()))

    return grow(0)


def sample_forest_prior(prior: BartPrior, predictor_ranges, rng: np.random.Generator) -> List[TreeNode]:
    return [sample_tree_prior(prior, predictor_ranges, rng) for _ in range(prior.num_trees)]


def prior_all_empty_probability(prior: BartPrior) -> float:
    """所有树都没有分裂的先验概率 (1-a)^T"""
    return float((1.0 - prior.branch_a) ** prior.num_trees)


def is_all_empty(state: Union[GbartState, Sequence[TreeNode]]) -> bool:
    """森林中每棵树都只有一个叶子（T = 0 时为真）"""
    forest = state.forest if isinstance(state, GbartState) else state
    return all(isinstance(tree, Leaf) for tree in forest)


def prior_check(prior: BartPrior, predictor_ranges, draws: int, rng: np.random.Generator) -> Dict[str, Dict[str, float]]:
    """
    先验的蒙特卡洛统计

    Returns:
        每个统计量的 empirical、expected、se 与 within_3se：
        no_split（单棵树无分裂，期望 1-a）、depth1_split（深度 1 节点分裂比例，期望 q(1)）、
        all_empty（整片森林无分裂，期望 (1-a)^T）
    """
    if draws < 1:
        raise ValueError(f"抽样次数必须为正: {draws}")
    single = replace(prior, num_trees=1) if prior.num_trees != 1 else prior
    no_split = 0
    depth1_nodes = 0
    depth1_split = 0
    for _ in range(draws):
        tree = sample_tree_prior(single, predictor_ranges, rng)
        if isinstance(tree, Leaf):
            no_split += 1
        else:
            for child in (tree.left, tree.right):
                depth1_nodes += 1
                depth1_split += isinstance(child, Branch)
    all_empty = sum(is_all_empty(sample_forest_prior(prior, predictor_ranges, rng)) for _ in range(draws))

    def entry(hits: int, total: int, expected: float) -> Dict[str, float]:
        empirical = hits / total if total else float("nan")
        se = float(np.sqrt(expected * (1.0 - expected) / total)) if total else float("nan")
        return {
            "empirical": empirical,
            "expected": expected,
            "se": se,
            "draws": total,
            "within_3se": bool(abs(empirical - expected) <= 3.0 * se) if total else False,
        }

    return {
        "no_split": entry(no_split, draws, 1.0 - prior.branch_a),
        "depth1_split": entry(depth1_split, depth1_nodes, prior.split_probability(1)),
        "all_empty": entry(all_empty, draws, prior_all_empty_probability(prior)),
    }


def _leaf_lm(n: float, total: float, total_sq: float, s2: float, tau2: float) -> float:
    return (-0.5 * n * np.log(2.0 * np.pi * s2) - 0.5 * np.log1p(n * tau2 / s2)
            - total_sq / (2.0 * s2) + tau2 * total * total / (2.0 * s2 * (s2 + n * tau2)))


def leaf_log_marginal(residuals: np.ndarray, sigma_sq: float, tau_sq: float) -> float:
    """
    叶子值以 N(0, tau^2) 积分后，残差 R ~ N(lambda 1, sigma^2 I) 的对数边际似然
    """
    r = np.asarray(residuals, dtype=float).reshape(-1)
    return float(_leaf_lm(r.size, r.sum(), r @ r, sigma_sq, tau_sq))


def tree_log_marginal(tree: TreeNode, X: np.ndarray, residuals: np.ndarray, sigma_sq: float, tau_sq: float) -> float:
    """固定树结构下各叶子对数边际似然之和"""
    r = np.asarray(residuals, dtype=float).reshape(-1)
    return float(sum(leaf_log_marginal(r[cell.rows], sigma_sq, tau_sq) for cell in partition(tree, np.asarray(X, dtype=float))))


def grow_prior_log_ratio(prior: BartPrior, depth: int) -> float:
    """深度 depth 的叶子分裂为两个叶子的树先验比 q(d)(1-q(d+1))^2/(1-q(d))"""
    q = prior.split_probability(depth)
    q_child = prior.split_probability(depth + 1)
    with np.errstate(divide="ignore"):
        return float(np.log(q) + 2.0 * np.log1p(-q_child) - np.log1p(-q))


def grow_proposal_log_ratio(tree_before: TreeNode, tree_after: TreeNode) -> float:
    """GROW 的提议比：反向 PRUNE 概率 1/W' 除以正向选叶概率 1/L（分裂规则与先验抵消）"""
    return float(np.log(count_leaves(tree_before)) - np.log(count_prunable(tree_after)))


def prune_proposal_log_ratio(tree_before: TreeNode, tree_after: TreeNode) -> float:
    """PRUNE 的提议比：反向 GROW 选叶概率 1/L' 除以正向选节点概率 1/W"""
    return float(np.log(count_prunable(tree_before)) - np.log(count_leaves(tree_after)))


def forest_fits(forest: Sequence[TreeNode], X: np.ndarray) -> np.ndarray:
    """T×N，每棵树在 X 各行的取值"""
    X = np.asarray(X, dtype=float)
    if not forest:
        return np.zeros((0, X.shape[0]))
    return np.vstack([tree_predict(tree, X) for tree in forest])


def forest_predict(state: GbartState, X: np.ndarray) -> np.ndarray:
    """
    原始响应尺度上的 mu(x) = y_shift + y_scale (x^T beta + sum_t g_t(x))

    Raises:
        ValueError: X 的列数与 beta 不一致
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != state.beta.size:
        raise ValueError(f"维度不匹配: 训练设计 {state.beta.size} 列，新点 {X.shape[1]} 列")
    total = X @ state.beta
    for tree in state.forest:
        total = total + tree_predict(tree, X)
    return state.y_shift + state.y_scale * total


def initial_state(data: GbartData, prior: BartPrior) -> GbartState:
    """全部树为零值叶子；beta 为标准化响应的最小二乘解；sigma = sigma_hat"""
    if data.linear_component:
        beta = linalg.cho_solve((data.xtx_factor, False), data.X.T @ data.y)
    else:
        beta = np.zeros(data.p)
    forest: List[TreeNode] = [Leaf(0.0) for _ in range(prior.num_trees)]
    return GbartState(forest, beta, data.sigma_hat, data.y_shift, data.y_scale,
                      np.zeros((prior.num_trees, data.n)))


class _ForestSampler:
    """一次 Gibbs 扫描的实现，记录 GROW/PRUNE 的提议与接受次数"""

    def __init__(self, data: GbartData, prior: BartPrior, rng: np.random.Generator, alpha: float):
        self.data = data
        self.prior = prior
        self.rng = rng
        self.alpha = alpha
        self.counts = {"grow_proposed": 0, "grow_accepted": 0, "prune_proposed": 0, "prune_accepted": 0}

    def sweep(self, state: GbartState, update_trees: bool = True, fixed_sigma: Optional[float] = None) -> GbartState:
        data = self.data
        X, y = data.X, data.y
        forest = list(state.forest)
        fits = state.tree_fits.copy() if state.tree_fits is not None else forest_fits(forest, X)
        beta = state.beta
        sigma = state.sigma
        s2 = sigma ** 2 / self.alpha
        tau2 = self.prior.leaf_variance

        if update_trees and forest:
            total_fit = fits.sum(axis=0)
            linear = X @ beta
            for t in range(len(forest)):
                partial = y - linear - (total_fit - fits[t])
                forest[t], new_fit = self._update_tree(forest[t], partial, s2, tau2)
                total_fit += new_fit - fits[t]
                fits[t] = new_fit
        total_fit = fits.sum(axis=0) if forest else np.zeros(data.n)

        if data.linear_component:
            target = y - total_fit
            mean = linalg.cho_solve((data.xtx_factor, False), X.T @ target)
            z = self.rng.standard_normal(data.p)
            beta = mean + np.sqrt(s2) * linalg.solve_triangular(data.xtx_factor, z, lower=False)

        if fixed_sigma is None:
            resid = y - X @ beta - total_fit
            shape = data.sigma_nu / 2.0 + self.alpha * data.n / 2.0
            scale = data.sigma_nu * data.sigma_lambda / 2.0 + self.alpha * float(resid @ resid) / 2.0
            sigma = float(np.sqrt(scale / self.rng.gamma(shape)))
        else:
            sigma = fixed_sigma

        return GbartState(forest, beta, sigma, state.y_shift, state.y_scale, fits)

    def _leaf_stats(self, partial: np.ndarray, rows: np.ndarray):
        values = partial[rows]
        return rows.size, float(values.sum()), float(values @ values)

    def _lm(self, partial, rows, s2, tau2) -> float:
        return _leaf_lm(*self._leaf_stats(partial, rows), s2, tau2)

    def _update_tree(self, tree: TreeNode, partial: np.ndarray, s2: float, tau2: float):
        rng = self.rng
        data = self.data
        cells = partition(tree, data.X)

        if rng.uniform() < 0.5:
            self.counts["grow_proposed"] += 1
            if data.split_vars.size:
                i = int(rng.integers(len(cells)))
                cell = cells[i]
                var = int(data.split_vars[rng.integers(data.split_vars.size)])
                cut = float(rng.uniform(data.ranges[var, 0], data.ranges[var, 1]))
                goes_left = data.X[cell.rows, var] < cut
                left_rows, right_rows = cell.rows[goes_left], cell.rows[~goes_left]
                # 空子节点直接拒绝
                if left_rows.size and right_rows.size:
                    proposal = replace_at(tree, cell.path, Branch(var, cut, Leaf(), Leaf()))
                    log_ratio = (self._lm(partial, left_rows, s2, tau2) + self._lm(partial, right_rows, s2, tau2)
                                 - self._lm(partial, cell.rows, s2, tau2)
                                 + grow_prior_log_ratio(self.prior, cell.depth)
                                 + grow_proposal_log_ratio(tree, proposal))
                    if np.log(rng.uniform()) < log_ratio:
                        self.counts["grow_accepted"] += 1
                        tree = proposal
                        cells = cells[:i] + [
                            LeafCell(cell.path + (0,), cell.depth + 1, left_rows),
                            LeafCell(cell.path + (1,), cell.depth + 1, right_rows),
                        ] + cells[i + 1:]
        else:
            self.counts["prune_proposed"] += 1
            candidates = prunable_paths(tree)
            if candidates:
                path, depth = candidates[int(rng.integers(len(candidates)))]
                i = next(k for k, c in enumerate(cells) if c.path == path + (0,))
                left, right = cells[i], cells[i + 1]
                merged_rows = np.concatenate([left.rows, right.rows])
                proposal = replace_at(tree, path, Leaf())
                log_ratio = (self._lm(partial, merged_rows, s2, tau2)
                             - self._lm(partial, left.rows, s2, tau2) - self._lm(partial, right.rows, s2, tau2)
                             - grow_prior_log_ratio(self.prior, depth)
                             + prune_proposal_log_ratio(tree, proposal))
                if np.log(rng.uniform()) < log_ratio:
                    self.counts["prune_accepted"] += 1
                    tree = proposal
                    cells = cells[:i] + [LeafCell(path, depth, merged_rows)] + cells[i + 2:]

        # 叶子值的高斯条件抽样
        values = np.empty(len(cells))
        fit = np.empty(data.n)
        for k, cell in enumerate(cells):
            n, total, _ = self._leaf_stats(partial, cell.rows)
            denominator = s2 + n * tau2
            values[k] = tau2 * total / denominator + np.sqrt(tau2 * s2 / denominator) * rng.standard_normal()
            fit[cell.rows] = values[k]
        return with_leaf_values(tree, values), fit

    def acceptance_rates(self) -> Dict[str, float]:
        rates = {}
        for move in ("grow", "prune"):
            proposed = self.counts[f"{move}_proposed"]
            rates[move] = self.counts[f"{move}_accepted"] / proposed if proposed else float("nan")
        return rates


def gibbs_sweep(state: GbartState, data: GbartData, prior: BartPrior, rng: np.random.Generator,
                alpha: float = 1.0, update_trees: bool = True, fixed_sigma: Optional[float] = None) -> GbartState:
    """
    一次贝叶斯回拟扫描

    逐棵树：对其余树与线性部分求偏残差，以 0.5/0.5 概率提议 GROW/PRUNE 并按 alpha 次幂的
    积分似然接受，然后抽取叶子值；之后共轭抽取 beta（平坦先验）与 sigma^2（逆伽马条件分布）。

    Args:
        state: 当前状态（标准化尺度）
        data: prepare_gbart_data 的结果
        prior: 森林先验
        rng: 随机数生成器
        alpha: 分数后验指数
        update_trees: 为假时森林保持不变
        fixed_sigma: 给定时 sigma 固定为该值（标准化尺度）

    Returns:
        新状态
    """
    return _ForestSampler(data, prior, rng, alpha).sweep(state, update_trees, fixed_sigma)


def fit_gbart(data: Dataset, prior: BartPrior, run_config: GbartRunConfig, rng: np.random.Generator,
              progress: bool = False) -> McmcChain:
    """
    拟合 GBART（linear_component 为假时为 BART 基线）

    记录的 beta 为原始尺度：森林样本内取值的均值并入截距坐标后再反标准化。

    Args:
        data: 数据集（包含线性部分时需有全 1 截距列）
        prior: 森林先验
        run_config: 运行设置
        rng: 随机数生成器（链独占）
        progress: 是否显示进度条

    Returns:
        预烧后的抽样：beta、sigma、all_empty、r2，以及 mu 的后验均值（按需记录每次抽样）
    """
    gdata = prepare_gbart_data(data, run_config.linear_component, run_config.sigma_nu, run_config.sigma_quantile)
    if not run_config.update_trees and prior.num_trees:
        warnings.warn("update_trees=False：森林固定为全零叶子，模型退化为线性回归")
    sampler = _ForestSampler(gdata, prior, rng, run_config.alpha)
    state = initial_state(gdata, prior)
    fixed_sigma = None
    if run_config.fixed_sigma is not None:
        fixed_sigma = run_config.fixed_sigma / gdata.y_scale
        state = replace(state, sigma=fixed_sigma)

    retained = run_config.iterations - run_config.burn_in
    n, p = gdata.n, gdata.p
    beta = np.zeros((retained, p))
    sigma = np.zeros(retained)
    all_empty = np.zeros(retained, dtype=bool)
    r2 = np.full(retained, np.nan)
    mu_sum = np.zeros(n)
    mu_draws = np.zeros((retained, n)) if run_config.store_mu else None
    projector = None
    if n > p:
        try:
            projector = LinearProjector(gdata.X)
        except ValueError:
            projector = None

    model = "GBART" if run_config.linear_component else "BART"
    logger.info(f"{model} 链开始: N={n}, P={p}, T={prior.num_trees}, 迭代 {run_config.iterations}, 预烧 {run_config.burn_in}")
    start = time.time()
    for iteration in tqdm(range(run_config.iterations), desc=model, unit="iter", disable=not progress):
        state = sampler.sweep(state, run_config.update_trees, fixed_sigma)
        k = iteration - run_config.burn_in
        if k < 0:
            continue
        total_fit = state.tree_fits.sum(axis=0) if prior.num_trees else np.zeros(n)
        mu = gdata.y_shift + gdata.y_scale * (gdata.X @ state.beta + total_fit)

        reported = state.beta.copy()
        if gdata.linear_component:
            reported[gdata.intercept_index] += total_fit.mean()
            reported *= gdata.y_scale
            reported[gdata.intercept_index] += gdata.y_shift
        beta[k] = reported
        sigma[k] = gdata.y_scale * state.sigma
        all_empty[k] = is_all_empty(state)
        if projector is not None:
            r2[k] = projector.r_squared_or_nan(mu)
        mu_sum += mu
        if mu_draws is not None:
            mu_draws[k] = mu

    rates = sampler.acceptance_rates()
    logger.info(f"{model} 链结束，用时 {format_time(time.time() - start)}，接受率 {rates}，"
                f"全空森林比例 {all_empty.mean():.3f}")

    return McmcChain(
        beta=beta,
        scalars={"sigma": sigma, "all_empty": all_empty, "r2": r2},
        mu_mean=mu_sum / retained,
        mu_draws=mu_draws,
        metadata={
            "sampler": model.lower(),
            "acceptance_rates": rates,
            "prior": prior.__dict__.copy(),
            "run_config": run_config.__dict__.copy(),
            "sigma_prior": gdata.prior_metadata(),
            "intercept_index": gdata.intercept_index,
        },
    )

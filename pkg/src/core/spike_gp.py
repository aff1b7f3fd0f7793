"""
Spike-and-GP 采样器
模型 Y = X beta + r(X) + eps，r | sigma_mu^2 ~ GP(0, sigma_mu^2 kappa_rho)，
sigma_mu^2 ~ p0 delta_0 + (1 - p0) InvGam(a, b)。r 始终被解析积分掉。
"""
import time
import logging
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import linalg, stats
from scipy.spatial.distance import cdist
from tqdm import tqdm

from .chain import McmcChain
from .dataset import Dataset
from .gp_conjugate import GaussianLaw
from .kernels import stable_cholesky
from .summaries import LinearProjector
from .utils import format_time

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SpikeGpConfig:
    """
    采样器设置

    p0 = 0 即连续尺度混合 GP，p0 = 1 把模型固定为参数子模型。
    噪声方差先验为 InvGam(a_sigma, b_sigma)。
    """
    p0: float = 0.5
    a_sigma_mu: float = 1.0
    b_sigma_mu: float = 1.0
    a_rho: float = 1.0
    b_rho: float = 1.0
    alpha: float = 1.0
    iterations: int = 4000
    burn_in: int = 1000
    proposal_sd: float = 0.5
    orthogonalize: bool = True
    a_sigma: float = 1.0
    b_sigma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError(f"先验 spike 质量 p0 必须在 [0, 1] 内: {self.p0}")
        for name in ("a_sigma_mu", "b_sigma_mu", "a_rho", "b_rho", "a_sigma", "b_sigma", "proposal_sd"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} 必须为正: {getattr(self, name)}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"分数指数 alpha 必须在 (0, 1] 内: {self.alpha}")
        if self.burn_in < 0 or self.iterations <= self.burn_in:
            raise ValueError(f"需要 0 <= burn_in < iterations: burn_in={self.burn_in}, iterations={self.iterations}")

    @classmethod
    def from_dict(cls, config: Dict[str, Any]) -> "SpikeGpConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in config.items() if k in known})


@dataclass(frozen=True, eq=False)
class SpikeGpState:
    """链的当前状态；included 为假时 sigma_mu_sq 必须为 0"""
    included: bool
    sigma_mu_sq: float
    rho: float
    beta: np.ndarray
    sigma_sq: float

    def __post_init__(self):
        if not self.included and self.sigma_mu_sq != 0.0:
            raise ValueError("排除非参数部分时 sigma_mu_sq 必须为 0")
        if self.sigma_mu_sq < 0 or not self.rho > 0 or not self.sigma_sq > 0:
            raise ValueError(
                f"状态参数越界: sigma_mu_sq={self.sigma_mu_sq}, rho={self.rho}, sigma_sq={self.sigma_sq}"
            )
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))


class SpikeGpModel:
    """
    缓存设计矩阵的平方距离与最近使用的核矩阵

    Args:
        data: 数据集（可以没有观测，此时似然恒为 1）
        orthogonalize: 是否把 kappa_rho 投影到 X 列空间的正交补上
    """

    def __init__(self, data: Dataset, orthogonalize: bool = True):
        self.X = data.X
        self.y = data.y
        self.n, self.p = self.X.shape
        self.orthogonalize = orthogonalize
        self._sq_dist = cdist(self.X, self.X, "sqeuclidean") if self.n > 0 else np.zeros((0, 0))
        self._kernel_cache: Dict[float, np.ndarray] = {}
        if self.n > 0 and orthogonalize:
            rank = np.linalg.matrix_rank(self.X)
            if rank < self.p:
                raise ValueError(f"设计矩阵秩亏: rank(X) = {rank} < P = {self.p}")

    def kernel_matrix(self, rho: float) -> np.ndarray:
        """样本内 kappa_rho（正交化时为投影核）Gram 矩阵"""
        cached = self._kernel_cache.get(rho)
        if cached is not None:
            return cached
        K = np.exp(-rho * self._sq_dist)
        if self.orthogonalize:
            KX = K @ self.X
            xkx = self.X.T @ KX
            K = K - KX @ np.linalg.solve((xkx + xkx.T) / 2.0, KX.T)
            K = (K + K.T) / 2.0
        if len(self._kernel_cache) >= 4:
            self._kernel_cache.pop(next(iter(self._kernel_cache)))
        self._kernel_cache[rho] = K
        return K

    def covariance(self, state: SpikeGpState) -> np.ndarray:
        Sigma = state.sigma_sq * np.eye(self.n)
        if state.included and state.sigma_mu_sq > 0:
            Sigma = Sigma + state.sigma_mu_sq * self.kernel_matrix(state.rho)
        return Sigma

    def log_likelihood(self, state: SpikeGpState) -> Tuple[float, Optional[np.ndarray]]:
        """未调温的边际对数似然及协方差的 Cholesky 因子（排除状态返回 None）"""
        if self.n == 0:
            return 0.0, None
        resid = self.y - self.X @ state.beta
        if not state.included:
            value = -0.5 * (self.n * (_LOG_2PI + np.log(state.sigma_sq)) + resid @ resid / state.sigma_sq)
            return float(value), None
        L = stable_cholesky(self.covariance(state), "Sigma")
        return self._gaussian_log_density(L, resid), L

    def _gaussian_log_density(self, L: np.ndarray, resid: np.ndarray) -> float:
        z = linalg.solve_triangular(L, resid, lower=True, check_finite=False)
        log_det = 2.0 * np.sum(np.log(np.diag(L)))
        return float(-0.5 * (self.n * _LOG_2PI + log_det + z @ z))


def marginal_log_likelihood(data: Any, state: SpikeGpState, alpha: float = 1.0,
                            orthogonalize: bool = True) -> float:
    """
    alpha 倍的边际对数似然 log N(Y; X beta, sigma_mu^2 K_rho + sigma^2 I)

    Args:
        data: 数据集或 SpikeGpModel
        state: 链状态（排除时协方差为 sigma^2 I）
        alpha: 分数后验指数
        orthogonalize: data 为数据集时是否使用投影核

    Returns:
        调温后的对数似然
    """
    model = data if isinstance(data, SpikeGpModel) else SpikeGpModel(data, orthogonalize)
    value, _ = model.log_likelihood(state)
    return alpha * value


def _invgamma_logpdf(x: float, a: float, b: float) -> float:
    return float(stats.invgamma.logpdf(x, a, scale=b))


def _draw_invgamma(rng: np.random.Generator, a: float, b: float) -> float:
    return float(b / rng.gamma(a))


def _log_odds(numerator: float, denominator: float) -> float:
    with np.errstate(divide="ignore"):
        return float(np.log(numerator) - np.log(denominator))


class _Sampler:
    """单条链的一次完整扫描，缓存当前状态的似然与 Cholesky 因子"""

    def __init__(self, model: SpikeGpModel, config: SpikeGpConfig, rng: np.random.Generator):
        self.model = model
        self.config = config
        self.rng = rng
        self.accepted = {"jump": 0, "sigma_mu_sq": 0, "rho": 0, "sigma_sq": 0}
        self.proposed = {"jump": 0, "sigma_mu_sq": 0, "rho": 0, "sigma_sq": 0}

    def _accept(self, log_ratio: float, move: str) -> bool:
        self.proposed[move] += 1
        if np.isnan(log_ratio):
            return False
        accepted = bool(np.log(self.rng.uniform()) < log_ratio)
        if accepted:
            self.accepted[move] += 1
        return accepted

    def sweep(self, state: SpikeGpState,
              cache: Optional[Tuple[float, Optional[np.ndarray]]] = None
              ) -> Tuple[SpikeGpState, Tuple[float, Optional[np.ndarray]]]:
        cfg = self.config
        alpha = cfg.alpha
        rng = self.rng
        ll, L = cache if cache is not None else self.model.log_likelihood(state)

        # (i) 跨维移动：进入 slab 时从先验提议 (sigma_mu^2, rho)
        if not state.included:
            proposal = replace(state, included=True,
                               sigma_mu_sq=_draw_invgamma(rng, cfg.a_sigma_mu, cfg.b_sigma_mu),
                               rho=_draw_invgamma(rng, cfg.a_rho, cfg.b_rho))
            log_prior_odds = _log_odds(1.0 - cfg.p0, cfg.p0)
        else:
            proposal = replace(state, included=False, sigma_mu_sq=0.0,
                               rho=_draw_invgamma(rng, cfg.a_rho, cfg.b_rho))
            log_prior_odds = _log_odds(cfg.p0, 1.0 - cfg.p0)
        # 先验几率为 -inf（目标状态先验概率为 0）时不计算似然，直接拒绝
        if log_prior_odds == -np.inf:
            log_ratio = -np.inf
        else:
            ll_prop, L_prop = self.model.log_likelihood(proposal)
            log_ratio = alpha * (ll_prop - ll) + log_prior_odds
        if self._accept(log_ratio, "jump"):
            state, ll, L = proposal, ll_prop, L_prop

        # (ii) slab 内对数尺度随机游走；排除状态下 rho 按伪先验刷新
        if state.included:
            state, ll, L = self._random_walk(state, ll, L, "sigma_mu_sq", cfg.a_sigma_mu, cfg.b_sigma_mu)
            state, ll, L = self._random_walk(state, ll, L, "rho", cfg.a_rho, cfg.b_rho)
        else:
            state = replace(state, rho=_draw_invgamma(rng, cfg.a_rho, cfg.b_rho))

        # (iii) beta 的共轭条件抽样（平坦先验）
        if self.model.n > 0:
            state, ll, L = self._draw_beta(state, L)

        # (iv) sigma^2：排除时共轭，包含时 Metropolis
        if state.included:
            state, ll, L = self._random_walk(state, ll, L, "sigma_sq", cfg.a_sigma, cfg.b_sigma)
        else:
            resid = self.model.y - self.model.X @ state.beta
            shape = cfg.a_sigma + alpha * self.model.n / 2.0
            scale = cfg.b_sigma + alpha * float(resid @ resid) / 2.0
            state = replace(state, sigma_sq=_draw_invgamma(rng, shape, scale))
            ll, L = self.model.log_likelihood(state)

        return state, (ll, L)

    def _random_walk(self, state: SpikeGpState, ll: float, L: Optional[np.ndarray],
                     name: str, a: float, b: float):
        current = getattr(state, name)
        candidate = current * np.exp(self.config.proposal_sd * self.rng.standard_normal())
        proposal = replace(state, **{name: candidate})
        ll_prop, L_prop = self.model.log_likelihood(proposal)
        # 对数尺度提议的 Jacobian: log(candidate) - log(current)
        log_ratio = (self.config.alpha * (ll_prop - ll)
                     + _invgamma_logpdf(candidate, a, b) - _invgamma_logpdf(current, a, b)
                     + np.log(candidate) - np.log(current))
        if self._accept(log_ratio, name):
            return proposal, ll_prop, L_prop
        return state, ll, L

    def _draw_beta(self, state: SpikeGpState, L: Optional[np.ndarray]):
        X, y = self.model.X, self.model.y
        if L is None:
            A = X / np.sqrt(state.sigma_sq)
            b = y / np.sqrt(state.sigma_sq)
        else:
            A = linalg.solve_triangular(L, X, lower=True, check_finite=False)
            b = linalg.solve_triangular(L, y, lower=True, check_finite=False)
        precision = self.config.alpha * (A.T @ A)
        R = linalg.cholesky(precision, lower=False)
        mean = linalg.cho_solve((R, False), self.config.alpha * (A.T @ b))
        beta = mean + linalg.solve_triangular(R, self.rng.standard_normal(self.model.p), lower=False)
        state = replace(state, beta=beta)
        ll, L = self.model.log_likelihood(state) if L is None else (
            self.model._gaussian_log_density(L, y - X @ beta), L)
        return state, ll, L

    def acceptance_rates(self) -> Dict[str, float]:
        return {move: (self.accepted[move] / self.proposed[move] if self.proposed[move] else float("nan"))
                for move in self.accepted}


def mcmc_step(state: SpikeGpState, data: Any, config: SpikeGpConfig,
              rng: np.random.Generator) -> SpikeGpState:
    """
    一次完整扫描：跨维移动、slab 内随机游走、beta 共轭抽样、sigma^2 更新

    Args:
        state: 当前状态
        data: 数据集或 SpikeGpModel
        config: 采样器设置
        rng: 随机数生成器

    Returns:
        新状态
    """
    model = data if isinstance(data, SpikeGpModel) else SpikeGpModel(data, config.orthogonalize)
    new_state, _ = _Sampler(model, config, rng).sweep(state)
    return new_state


def initial_state(model: SpikeGpModel, config: SpikeGpConfig, rng: np.random.Generator) -> SpikeGpState:
    """排除状态、最小二乘 beta、残差方差 sigma^2；rho 从先验抽取"""
    if model.n > 0:
        beta, *_ = np.linalg.lstsq(model.X, model.y, rcond=None)
        resid = model.y - model.X @ beta
        dof = model.n - model.p
        sigma_sq = float(resid @ resid / dof) if dof > 0 else float(np.var(model.y)) or 1.0
        sigma_sq = sigma_sq if sigma_sq > 0 else 1.0
    else:
        beta = np.zeros(model.p)
        sigma_sq = 1.0
    rho = _draw_invgamma(rng, config.a_rho, config.b_rho)
    return SpikeGpState(False, 0.0, rho, beta, sigma_sq)


def conditional_mu(model: SpikeGpModel, state: SpikeGpState, L: Optional[np.ndarray],
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    样本内 mu = X beta + r：给定 rng 时从 r 的高斯条件分布抽样，否则返回条件均值

    条件分布 r | Y ~ N(S Sigma^{-1}(Y - X beta), S - S Sigma^{-1} S)，S = sigma_mu^2 K。
    """
    linear = model.X @ state.beta
    if not state.included or state.sigma_mu_sq == 0.0:
        return linear
    if L is None:
        L = stable_cholesky(model.covariance(state), "Sigma")
    S = state.sigma_mu_sq * model.kernel_matrix(state.rho)
    resid = model.y - linear
    mean = S @ linalg.cho_solve((L, True), resid, check_finite=False)
    if rng is None:
        return linear + mean
    W = linalg.solve_triangular(L, S, lower=True, check_finite=False)
    r = GaussianLaw(mean, S - W.T @ W).sample(rng, 1)[0]
    return linear + r


def run_chain(data: Dataset, config: SpikeGpConfig, rng: np.random.Generator,
              store_mu: Optional[str] = None, progress: bool = False) -> McmcChain:
    """
    运行一条链

    Args:
        data: 数据集
        config: 采样器设置
        rng: 随机数生成器（链独占）
        store_mu: None/False 不记录 mu；"mean" 记录 r 的条件均值；"draw"/True 记录 r 的条件抽样
        progress: 是否显示进度条

    Returns:
        iterations - burn_in 条预烧后抽样
    """
    if isinstance(store_mu, bool):
        store_mu = "draw" if store_mu else None
    if store_mu not in (None, "mean", "draw"):
        raise ValueError(f"store_mu 只能是 None、'mean' 或 'draw': {store_mu}")
    model = SpikeGpModel(data, config.orthogonalize)
    sampler = _Sampler(model, config, rng)
    state = initial_state(model, config, rng)
    retained = config.iterations - config.burn_in

    included = np.zeros(retained, dtype=bool)
    sigma_mu_sq = np.zeros(retained)
    rho = np.zeros(retained)
    sigma = np.zeros(retained)
    beta = np.zeros((retained, model.p))
    mu_draws = np.zeros((retained, model.n)) if store_mu else None
    projector = LinearProjector(model.X) if store_mu and model.n > model.p else None
    r2 = np.full(retained, np.nan)

    logger.info(f"spike-GP 链开始: N={model.n}, P={model.p}, 迭代 {config.iterations}, 预烧 {config.burn_in}")
    start = time.time()
    cache = None
    for iteration in tqdm(range(config.iterations), desc="spike-GP", unit="iter", disable=not progress):
        state, cache = sampler.sweep(state, cache)
        k = iteration - config.burn_in
        if k < 0:
            continue
        included[k] = state.included
        sigma_mu_sq[k] = state.sigma_mu_sq
        rho[k] = state.rho
        sigma[k] = np.sqrt(state.sigma_sq)
        beta[k] = state.beta
        if mu_draws is not None:
            draw_rng = rng if store_mu == "draw" else None
            mu_draws[k] = conditional_mu(model, state, cache[1], draw_rng)
            if projector is not None:
                r2[k] = projector.r_squared_or_nan(mu_draws[k])

    rates = sampler.acceptance_rates()
    logger.info(f"spike-GP 链结束，用时 {format_time(time.time() - start)}，接受率 {rates}")

    scalars = {"included": included, "sigma_mu_sq": sigma_mu_sq, "rho": rho, "sigma": sigma}
    if store_mu:
        scalars["r2"] = r2
    return McmcChain(
        beta=beta,
        scalars=scalars,
        mu_mean=mu_draws.mean(axis=0) if mu_draws is not None else None,
        mu_draws=mu_draws,
        metadata={"sampler": "spike_gp", "acceptance_rates": rates, "config": config.__dict__.copy(),
                  "store_mu": store_mu},
    )


def inclusion_probability(chain: McmcChain) -> float:
    """
    非参数部分的后验包含概率 Pi(r != 0 | Z_N)

    Raises:
        ValueError: 链为空
    """
    if len(chain) == 0:
        raise ValueError("链为空，无法计算包含概率")
    return float(np.mean(chain.scalar("included")))

"""
模拟实验
数据生成过程、评价指标与三组重复实验（速率自适应、模型选择、半参数 BvM）的驱动
"""
import time
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .dataset import Dataset
from .gbart import BartPrior, GbartRunConfig, fit_gbart
from .gp_conjugate import GpFit, credible_interval, posterior_projection
from .kernels import KernelSpec, laplace_kernel, linear_kernel, se_kernel, sum_kernel
from .spike_gp import SpikeGpConfig, inclusion_probability, run_chain
from .utils import cell_key_words, format_time

logger = logging.getLogger(__name__)

QUADRATIC = "quadratic"
LINEAR_BVM = "linear_bvm"

RESULT_COLUMNS = ["experiment", "method", "kernel", "N", "lambda0", "sigma0", "rep", "seed", "metric", "value"]
KEY_COLUMNS = ["experiment", "method", "kernel", "N", "lambda0", "sigma0", "rep", "metric"]

RATE_METHODS = ("BART", "GBART", "Linear")
BVM_KERNELS = ("laplace", "se", "se_linear", "se_linear_squared")

PROGRESS_FORMAT = "{l_bar}{bar}| {n_fmt}/{total_fmt} [{elapsed}<{remaining}, {rate_fmt}]"


@dataclass(frozen=True)
class DgpSpec:
    """
    数据生成过程

    quadratic:  Y = (1/sqrt(P)) sum_j X_j + lambda0 X_1^2 + eps
    linear_bvm: Y = sum_j beta0_j X_j + eps
    X_ij iid N(0, 1)，eps ~ N(0, sigma0^2)。
    """
    kind: str = QUADRATIC
    p: int = 5
    lambda0: float = 0.0
    sigma0: float = 1.0
    beta0: Union[float, Tuple[float, ...]] = 1.55

    def __post_init__(self):
        if self.kind not in (QUADRATIC, LINEAR_BVM):
            raise ValueError(f"未知的数据生成过程: {self.kind}")
        if self.p < 1:
            raise ValueError(f"预测变量个数必须为正: {self.p}")
        if not self.sigma0 > 0:
            raise ValueError(f"噪声标准差必须为正: {self.sigma0}")

    @property
    def beta0_vector(self) -> np.ndarray:
        beta0 = np.asarray(self.beta0, dtype=float).reshape(-1)
        if beta0.size == 1:
            return np.full(self.p, float(beta0[0]))
        if beta0.size != self.p:
            raise ValueError(f"beta0 长度 {beta0.size} 与 P = {self.p} 不一致")
        return beta0

    def mu0(self, X: np.ndarray) -> np.ndarray:
        """真实回归函数"""
        X = np.asarray(X, dtype=float)
        if self.kind == QUADRATIC:
            return X.sum(axis=1) / np.sqrt(self.p) + self.lambda0 * X[:, 0] ** 2
        return X @ self.beta0_vector


def generate(dgp: DgpSpec, n: int, rng: np.random.Generator) -> Dataset:
    """
    生成一份数据集（附带 mu0 用于评分）

    Args:
        dgp: 数据生成过程
        n: 样本量
        rng: 随机数生成器

    Returns:
        X 为 N×P（不含截距列）的数据集
    """
    if n < 1:
        raise ValueError(f"样本量必须为正: {n}")
    X = rng.standard_normal((n, dgp.p))
    mu0 = dgp.mu0(X)
    y = mu0 + dgp.sigma0 * rng.standard_normal(n)
    return Dataset(X, y, [f"x{j + 1}" for j in range(dgp.p)], mu0)


def mse(mu_hat: np.ndarray, mu0: np.ndarray) -> float:
    """(1/N) sum (mu0 - mu_hat)^2"""
    mu_hat = np.asarray(mu_hat, dtype=float).reshape(-1)
    mu0 = np.asarray(mu0, dtype=float).reshape(-1)
    if mu_hat.size != mu0.size:
        raise ValueError(f"长度不一致: {mu_hat.size} 与 {mu0.size}")
    return float(np.mean((mu0 - mu_hat) ** 2))


def least_squares_fit(data: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """带截距的普通最小二乘，返回 (系数, 样本内拟合值)"""
    design = data.with_intercept().X
    beta, *_ = np.linalg.lstsq(design, data.y, rcond=None)
    return beta, design @ beta


def derive_seed_sequence(master_seed: int, cell_id: str, rep: int) -> np.random.SeedSequence:
    high, low = cell_key_words(cell_id)
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(high, low, int(rep)))


def derive_rng(master_seed: int, cell_id: str, rep: int) -> np.random.Generator:
    """
    单元格 cell_id 第 rep 次重复的独立随机流

    Philox 位生成器，种子为 SeedSequence(entropy=master_seed,
    spawn_key=(sha256(cell_id) 前 4 字节, 第 5-8 字节, rep))。
    """
    return np.random.Generator(np.random.Philox(derive_seed_sequence(master_seed, cell_id, rep)))


def stream_seed(master_seed: int, cell_id: str, rep: int) -> int:
    """写入结果表 seed 列的 64 位标识"""
    return int(derive_seed_sequence(master_seed, cell_id, rep).generate_state(1, np.uint64)[0])


class ExperimentResult:
    """
    长表形式的实验结果，每行一个 (单元格, 重复, 指标)

    失败的任务不写入行，记录在 failures 中。
    """

    def __init__(self, name: str = ""):
        self.name = name
        self._rows: Dict[Tuple, Dict[str, Any]] = {}
        self.failures: List[Dict[str, Any]] = []

    def __len__(self) -> int:
        return len(self._rows)

    def add(self, row: Dict[str, Any]) -> None:
        missing = [c for c in RESULT_COLUMNS if c not in row]
        if missing:
            raise ValueError(f"结果行缺少字段: {missing}")
        key = tuple(row[c] for c in KEY_COLUMNS)
        if key in self._rows:
            raise ValueError(f"重复的结果键: {key}")
        self._rows[key] = {c: row[c] for c in RESULT_COLUMNS}

    def add_failure(self, cell_id: str, rep: int, error: str) -> None:
        self.failures.append({"cell_id": cell_id, "rep": rep, "error": error})

    def merge(self, other: "ExperimentResult") -> "ExperimentResult":
        for row in other._rows.values():
            self.add(row)
        self.failures.extend(other.failures)
        return self

    def to_frame(self) -> pd.DataFrame:
        """按键排序的长表，行序与任务完成顺序无关"""
        if not self._rows:
            return pd.DataFrame(columns=RESULT_COLUMNS)
        frame = pd.DataFrame([self._rows[key] for key in sorted(self._rows)], columns=RESULT_COLUMNS)
        return frame.reset_index(drop=True)

    def summary(self) -> pd.DataFrame:
        """每个单元格与指标的均值、标准误与重复次数"""
        frame = self.to_frame()
        group_columns = ["experiment", "method", "kernel", "N", "lambda0", "sigma0", "metric"]
        if frame.empty:
            return pd.DataFrame(columns=group_columns + ["mean", "se", "count"])
        grouped = frame.groupby(group_columns, sort=True)["value"]
        summary = grouped.agg(["mean", "std", "count"]).reset_index()
        summary["se"] = summary["std"].fillna(0.0) / np.sqrt(summary["count"])
        return summary[group_columns + ["mean", "se", "count"]]

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class _Task:
    """一个 (单元格, 重复) 任务"""
    experiment: str
    method: str
    kernel: str
    n: int
    lambda0: float
    sigma0: float
    rep: int

    @property
    def cell_id(self) -> str:
        return (f"{self.experiment}|{self.method}|{self.kernel}|N={self.n}"
                f"|lambda0={self.lambda0!r}|sigma0={self.sigma0!r}")

    @property
    def data_cell_id(self) -> str:
        """同一数据单元格下的各方法共用一份数据"""
        return f"{self.experiment}|data|N={self.n}|lambda0={self.lambda0!r}|sigma0={self.sigma0!r}"


def _run_tasks(name: str, tasks: Sequence[_Task], runner: Callable[[_Task, int], List[Tuple[str, float]]],
               master_seed: int, threads: int = 1, progress: bool = True) -> ExperimentResult:
    """在线程池中执行任务，逐个捕获异常并按键合并结果"""
    result = ExperimentResult(name)
    start = time.time()
    logger.info(f"实验 {name} 开始: {len(tasks)} 个任务, {threads} 个线程, 主种子 {master_seed}")

    def execute(task: _Task):
        try:
            return task, runner(task, master_seed), None
        except Exception as e:
            return task, None, f"{type(e).__name__}: {e}"

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [pool.submit(execute, task) for task in tasks]
        progress_bar = tqdm(total=len(futures), desc=f"实验: {name}", unit="任务",
                            bar_format=PROGRESS_FORMAT, disable=not progress)
        for future in as_completed(futures):
            task, metrics, error = future.result()
            progress_bar.update(1)
            if error is not None:
                logger.error(f"任务失败 {task.cell_id} rep={task.rep}: {error}")
                result.add_failure(task.cell_id, task.rep, error)
                continue
            seed = stream_seed(master_seed, task.cell_id, task.rep)
            for metric, value in metrics:
                result.add({
                    "experiment": task.experiment, "method": task.method, "kernel": task.kernel,
                    "N": task.n, "lambda0": task.lambda0, "sigma0": task.sigma0, "rep": task.rep,
                    "seed": seed, "metric": metric, "value": float(value),
                })
        progress_bar.close()

    logger.info(f"实验 {name} 完成，用时 {format_time(time.time() - start)}，"
                f"{len(result)} 行结果，{len(result.failures)} 个失败任务")
    return result


def _section(config: Dict[str, Any], key: str) -> Dict[str, Any]:
    if key not in config:
        raise ValueError(f"配置缺少 {key} 部分")
    return config[key]


def _gbart_settings(config: Dict[str, Any]) -> Tuple[BartPrior, GbartRunConfig]:
    section = dict(config.get("gbart", {}))
    section["store_mu"] = False
    return BartPrior.from_dict(section), GbartRunConfig.from_dict(section)


def run_rate_experiment(config: Dict[str, Any], master_seed: int, threads: int = 1,
                        progress: bool = True) -> ExperimentResult:
    """
    速率自适应实验：每个 (方法, N, sigma0, lambda0, 重复) 记录 mu0 的估计 MSE

    Args:
        config: 完整配置（使用 rate_experiment 与 gbart 部分）
        master_seed: 主种子
        threads: 线程数
        progress: 是否显示进度条
    """
    section = _section(config, "rate_experiment")
    methods = list(section.get("methods", RATE_METHODS))
    unknown = [m for m in methods if m not in RATE_METHODS]
    if unknown:
        raise ValueError(f"未知的方法: {unknown}，可选 {list(RATE_METHODS)}")
    prior, run_config = _gbart_settings(config)
    p = int(section.get("p", 5))

    def runner(task: _Task, seed: int) -> List[Tuple[str, float]]:
        dgp = DgpSpec(QUADRATIC, p=p, lambda0=task.lambda0, sigma0=task.sigma0)
        data = generate(dgp, task.n, derive_rng(seed, task.data_cell_id, task.rep))
        if task.method == "Linear":
            _, fitted = least_squares_fit(data)
        else:
            rng = derive_rng(seed, task.cell_id, task.rep)
            linear = task.method == "GBART"
            chain = fit_gbart(data.with_intercept() if linear else data, prior,
                              replace(run_config, linear_component=linear), rng)
            fitted = chain.mu_mean
        return [("mse", mse(fitted, data.mu0))]

    tasks = [
        _Task("rate", method, "", int(n), float(lambda0), float(sigma0), rep)
        for method in methods
        for n in section["n_grid"]
        for sigma0 in section["sigma0_grid"]
        for lambda0 in section["lambda0_grid"]
        for rep in range(int(section["replications"]))
    ]
    return _run_tasks("rate", tasks, runner, master_seed, threads, progress)


def run_selection_experiment(config: Dict[str, Any], master_seed: int, threads: int = 1,
                             progress: bool = True) -> ExperimentResult:
    """
    模型选择实验：spike-GP 采样器的后验包含概率

    Args:
        config: 完整配置（使用 selection_experiment 与 spike_gp 部分）
        master_seed: 主种子
        threads: 线程数
        progress: 是否显示进度条
    """
    section = _section(config, "selection_experiment")
    if not section.get("lambda0_grid"):
        raise ValueError("选择实验需要 lambda0_grid")
    sampler_config = SpikeGpConfig.from_dict(config.get("spike_gp", {}))
    p = int(section.get("p", 5))

    def runner(task: _Task, seed: int) -> List[Tuple[str, float]]:
        dgp = DgpSpec(QUADRATIC, p=p, lambda0=task.lambda0, sigma0=task.sigma0)
        data = generate(dgp, task.n, derive_rng(seed, task.data_cell_id, task.rep))
        chain = run_chain(data.with_intercept(), sampler_config, derive_rng(seed, task.cell_id, task.rep))
        return [("inclusion_probability", inclusion_probability(chain))]

    tasks = [
        _Task("selection", "spike_gp", "se", int(n), float(lambda0), float(sigma0), rep)
        for n in section["n_grid"]
        for sigma0 in section["sigma0_grid"]
        for lambda0 in section["lambda0_grid"]
        for rep in range(int(section["replications"]))
    ]
    return _run_tasks("selection", tasks, runner, master_seed, threads, progress)


def bvm_kernel(name: str) -> KernelSpec:
    """
    BvM 实验的核

    laplace: exp(-||x-x'||)；se: exp(-||x-x'||^2)；
    se_linear: 100 x^T x' + exp(-||x-x'||)；se_linear_squared: 100 x^T x' + exp(-||x-x'||^2)
    """
    if name == "laplace":
        return laplace_kernel()
    if name == "se":
        return se_kernel(1.0)
    if name == "se_linear":
        return sum_kernel([linear_kernel(100.0), laplace_kernel()])
    if name == "se_linear_squared":
        return sum_kernel([linear_kernel(100.0), se_kernel(1.0)])
    raise ValueError(f"未知的 BvM 核: {name}，可选 {list(BVM_KERNELS)}")


def bvm_metrics(data: Dataset, kernel: KernelSpec, beta0_1: float, level: float = 0.95,
                noise_sd: float = 1.0, alpha: float = 1.0) -> List[Tuple[str, float]]:
    """第一个投影坐标的覆盖指示、sqrt(N) 倍偏差与 N 倍后验方差"""
    n, p = data.X.shape
    if n <= p:
        raise ValueError(f"设计矩阵不是超定的: N={n}, P={p}")
    law = posterior_projection(GpFit(kernel, data.X, data.y, noise_sd, alpha))
    lower, upper = credible_interval(law, 0, level)
    mean = float(law.mean[0])
    return [
        ("covered", float(lower <= beta0_1 <= upper)),
        ("scaled_bias", np.sqrt(n) * (mean - beta0_1)),
        ("scaled_variance", n * float(law.covariance[0, 0])),
    ]


def run_bvm_experiment(config: Dict[str, Any], master_seed: int, threads: int = 1,
                       progress: bool = True) -> ExperimentResult:
    """
    半参数 BvM 实验：共轭 GP 后验下 beta*_1 的覆盖、缩放偏差与缩放方差

    Args:
        config: 完整配置（使用 bvm_experiment 与 gp 部分）
        master_seed: 主种子
        threads: 线程数
        progress: 是否显示进度条
    """
    section = _section(config, "bvm_experiment")
    kernels = list(section.get("kernels", ["laplace", "se", "se_linear"]))
    for name in kernels:
        bvm_kernel(name)
    p = int(section.get("p", 5))
    beta0 = section.get("beta0", 1.55)
    level = float(section.get("level", 0.95))
    estimate_sigma = bool(section.get("estimate_sigma", False))
    alpha = float(config.get("gp", {}).get("alpha", 1.0))

    def runner(task: _Task, seed: int) -> List[Tuple[str, float]]:
        dgp = DgpSpec(LINEAR_BVM, p=p, sigma0=1.0, beta0=tuple(np.atleast_1d(beta0).tolist()))
        data = generate(dgp, task.n, derive_rng(seed, task.data_cell_id, task.rep))
        noise_sd = 1.0
        if estimate_sigma:
            if task.n <= p:
                raise ValueError(f"设计矩阵不是超定的: N={task.n}, P={p}")
            beta, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
            resid = data.y - data.X @ beta
            noise_sd = float(np.sqrt(resid @ resid / (task.n - p)))
        return bvm_metrics(data, bvm_kernel(task.kernel), float(dgp.beta0_vector[0]), level, noise_sd, alpha)

    tasks = [
        _Task("bvm", "gp", kernel, int(n), 0.0, 1.0, rep)
        for kernel in kernels
        for n in section["n_grid"]
        for rep in range(int(section["replications"]))
    ]
    return _run_tasks("bvm", tasks, runner, master_seed, threads, progress)


EXPERIMENTS: Dict[str, Callable[..., ExperimentResult]] = {
    "rate": run_rate_experiment,
    "selection": run_selection_experiment,
    "bvm": run_bvm_experiment,
}


def run_experiment(name: str, config: Dict[str, Any], master_seed: int, threads: int = 1,
                   progress: bool = True) -> ExperimentResult:
    """按名称运行实验（rate、selection、bvm）"""
    if name not in EXPERIMENTS:
        raise ValueError(f"未知的实验: {name}，可选 {list(EXPERIMENTS)}")
    return EXPERIMENTS[name](config, master_seed, threads, progress)

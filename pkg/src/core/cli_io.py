"""
命令行功能
运行配置、结果文件输出与各子命令的执行
"""
import os
import sys
import logging
import traceback
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from . import __version__
from . import gp_conjugate, summaries
from .dataset import Dataset, parse_dataset, write_dataset
from .experiments import derive_rng, run_experiment
from .gbart import BartPrior, GbartRunConfig, fit_gbart, prior_check
from .kernels import kernel_from_dict, kernel_to_dict
from .plotting import plot_experiment, plot_trace
from .spike_gp import SpikeGpConfig, inclusion_probability, run_chain
from .utils import DEFAULT_LEDGER, load_config, resolve_threads, save_config, validate_output_path

logger = logging.getLogger(__name__)

COMMANDS = ("experiment", "fit", "summarize", "prior-check")
TARGETS = {
    "experiment": ("rate", "selection", "bvm"),
    "fit": ("gp", "spikegp", "gbart"),
    "summarize": ("project-linear", "kl-logistic", "cart"),
    "prior-check": ("bart",),
}
METADATA_FILE = "metadata.json"
MAX_SEED = 2 ** 64

USAGE = """usage: run.py [options] <command> ...
  experiment rate|selection|bvm
  fit gp|spikegp|gbart <data.csv>
  summarize project-linear|kl-logistic|cart <mu.csv> <data.csv>
  prior-check bart [--trees T] [--a A] [--b B] [--draws D]
options: --config PATH --seed N --out DIR --threads N --force --log-level LEVEL"""


@dataclass
class RunConfig:
    """
    一次命令行调用

    Attributes:
        command: experiment / fit / summarize / prior-check
        target: 子命令（实验名、模型名、摘要类型）
        inputs: 输入文件
        config_path: JSON 配置文件
        master_seed: 主种子（None 时取配置文件中的值）
        output_dir: 输出目录（None 时取配置文件中的值）
        threads: 线程数（None 时依次取 DEMEXP_THREADS、配置文件）
        force: 允许覆盖已有结果文件
        options: 子命令专用参数（prior-check 的 trees、a、b、draws）
    """
    command: str
    target: str
    inputs: List[str] = field(default_factory=list)
    config_path: Optional[str] = None
    master_seed: Optional[int] = None
    output_dir: Optional[str] = None
    threads: Optional[int] = None
    force: bool = False
    options: Dict[str, Any] = field(default_factory=dict)
    argv: List[str] = field(default_factory=list)
    progress: bool = True


@dataclass
class _Context:
    """解析完优先级之后的有效设置"""
    run: RunConfig
    config: Dict[str, Any]
    master_seed: int
    output_dir: str
    threads: int


def _resolve(run_config: RunConfig) -> _Context:
    """命令行参数 > 配置文件 > 内置默认值"""
    config = load_config(run_config.config_path)
    seed = run_config.master_seed if run_config.master_seed is not None else config.get("master_seed", 0)
    seed = int(seed)
    if not 0 <= seed < MAX_SEED:
        raise ValueError(f"主种子必须是 64 位无符号整数: {seed}")
    output_dir = run_config.output_dir or config.get("output_dir", "output")
    threads = resolve_threads(run_config.threads, config.get("threads"))
    config["master_seed"] = seed
    config["output_dir"] = output_dir
    config["threads"] = threads
    return _Context(run_config, config, seed, output_dir, threads)


def prepare_outputs(output_dir: str, names: List[str], force: bool) -> List[str]:
    """
    检查输出文件，未加 --force 时不覆盖已有文件

    Raises:
        FileExistsError: 文件已存在
        OSError: 目录无法创建或写入
    """
    paths = [os.path.join(output_dir, name) for name in names]
    for path in paths:
        valid, message = validate_output_path(path, force)
        if not valid:
            if os.path.exists(path):
                raise FileExistsError(message)
            raise OSError(message)
    return paths


def write_metadata(path: str, context: _Context, results: Optional[Dict[str, Any]] = None) -> None:
    """写入 metadata.json：有效配置、种子、版本、命令行与默认值清单"""
    metadata = {
        "version": __version__,
        "created": datetime.now().isoformat(timespec="seconds"),
        "command": [context.run.command, context.run.target] + list(context.run.inputs),
        "argv": list(context.run.argv),
        "master_seed": context.master_seed,
        "threads": context.threads,
        "config_path": context.run.config_path,
        "config": context.config,
        "defaults_ledger": DEFAULT_LEDGER,
        "results": results or {},
    }
    if not save_config(path, metadata):
        raise OSError(f"无法写入元数据: {path}")


def read_mu_csv(path: str) -> np.ndarray:
    """
    读取拟合函数值

    支持单列 "mu"（一个函数，N 行），或每行一次抽样、列为 mu_1..mu_N（可带 draw 列）。

    Returns:
        draws×N 矩阵
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"mu 文件不存在: {path}")
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError as e:
        raise ValueError(f"mu 文件为空: {path}") from e
    frame.columns = [str(c).strip() for c in frame.columns]
    mu_columns = [c for c in frame.columns if c.startswith("mu_")]
    if mu_columns:
        try:
            mu_columns.sort(key=lambda c: int(c[3:]))
        except ValueError as e:
            raise ValueError(f"无法识别的 mu 列名: {mu_columns}") from e
        values = frame[mu_columns].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    elif "mu" in frame.columns:
        values = pd.to_numeric(frame["mu"], errors="coerce").to_numpy(dtype=float).reshape(1, -1)
    else:
        raise ValueError(f"mu 文件需要 'mu' 列或 mu_1..mu_N 列: {path}")
    if values.size == 0:
        raise ValueError(f"mu 文件没有数据: {path}")
    if not np.all(np.isfinite(values)):
        row, col = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(f"mu 文件含非数值或非有限单元格: 第 {row + 1} 次抽样, 第 {col + 1} 列")
    return values


def _write_frame(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"已写出 {path}")


def _mu_mean_frame(mu: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({"mu": np.asarray(mu, dtype=float)})


def _overall_r2(mu_mean: Optional[np.ndarray], X: np.ndarray) -> Optional[float]:
    """后验均值函数的整体摘要 R²；未记录 mu、mu 为常数或 N <= P 时为 None"""
    if mu_mean is None:
        return None
    try:
        r2 = summaries.LinearProjector(X).r_squared_or_nan(mu_mean)
    except ValueError:
        return None
    return None if np.isnan(r2) else float(r2)


def _projection_frame(projection: summaries.PosteriorProjection, names: List[str]) -> pd.DataFrame:
    frame = pd.DataFrame({"draw": np.arange(1, len(projection) + 1)})
    for j, name in enumerate(names):
        frame[f"beta_{name}"] = projection.beta_star[:, j]
    frame["r2"] = projection.r_squared
    frame["sse"] = projection.sse
    return frame


def _overall_frame(summary: summaries.ProjectionSummary, names: List[str]) -> pd.DataFrame:
    row = {f"beta_{name}": float(summary.beta_star[j]) for j, name in enumerate(names)}
    row["r2"] = summary.r_squared
    row["sse"] = summary.sse
    return pd.DataFrame([row])


def _run_experiment_command(context: _Context) -> None:
    name = context.run.target
    results_path, summary_path, plot_path, metadata_path = prepare_outputs(
        context.output_dir,
        [f"{name}_results.csv", f"{name}_summary.csv", f"{name}_plot.svg", METADATA_FILE],
        context.run.force,
    )
    result = run_experiment(name, context.config, context.master_seed, context.threads, context.run.progress)
    result.to_csv(results_path)
    summary = result.summary()
    _write_frame(summary, summary_path)
    plot_experiment(name, summary, plot_path)
    write_metadata(metadata_path, context, {"experiment": name, "rows": len(result), "failures": result.failures})
    print(f"{name}: {len(result)} 行结果写入 {results_path}，失败任务 {len(result.failures)} 个")


def _fit_gp(context: _Context, data: Dataset) -> None:
    chain_path, summary_path, mu_path, metadata_path = prepare_outputs(
        context.output_dir, ["chain.csv", "projection_summary.csv", "mu_mean.csv", METADATA_FILE], context.run.force
    )
    section = context.config.get("gp", {})
    data = data.with_intercept()
    kernel = kernel_from_dict(context.config["kernel"], anchor_design=data.X)
    fit = gp_conjugate.GpFit(kernel, data.X, data.y, float(section.get("noise_sd", 1.0)), float(section.get("alpha", 1.0)))
    rng = derive_rng(context.master_seed, "fit|gp", 0)

    law = gp_conjugate.posterior_at_design(fit)
    draws = law.sample(rng, int(section.get("draws", 1000)))
    projection = summaries.posterior_projection(draws, data.X)
    _write_frame(_projection_frame(projection, data.columns), chain_path)

    beta_law = gp_conjugate.posterior_projection(fit)
    level = float(section.get("level", 0.95))
    rows = []
    for j, name in enumerate(data.columns):
        lower, upper = gp_conjugate.credible_interval(beta_law, j, level)
        rows.append({"coefficient": name, "mean": beta_law.mean[j], "sd": beta_law.marginal_sd()[j],
                     "lower": lower, "upper": upper})
    _write_frame(pd.DataFrame(rows), summary_path)
    _write_frame(_mu_mean_frame(law.mean), mu_path)
    write_metadata(metadata_path, context, {
        "model": "gp", "kernel": kernel_to_dict(kernel), "level": level,
        "overall_r2": _overall_r2(law.mean, data.X),
    })
    print(f"gp: 投影后验写入 {summary_path}")


def _fit_spikegp(context: _Context, data: Dataset) -> None:
    section = context.config.get("spike_gp", {})
    store_mu = section.get("store_mu", "mean")
    names = ["chain.csv", "sigma_trace.svg", METADATA_FILE]
    if store_mu:
        names += ["mu.csv", "mu_mean.csv", "projection_draws.csv"]
    paths = dict(zip(names, prepare_outputs(context.output_dir, names, context.run.force)))

    data = data.with_intercept()
    chain = run_chain(data, SpikeGpConfig.from_dict(section), derive_rng(context.master_seed, "fit|spikegp", 0),
                      store_mu=store_mu, progress=context.run.progress)
    _write_frame(chain.to_frame(beta_names=data.columns), paths["chain.csv"])
    plot_trace(chain.scalar("sigma"), paths["sigma_trace.svg"], "sigma")
    results = {"model": "spike_gp", "inclusion_probability": inclusion_probability(chain),
               "acceptance_rates": chain.metadata["acceptance_rates"], "store_mu": chain.metadata["store_mu"],
               "overall_r2": _overall_r2(chain.mu_mean, data.X)}
    if chain.mu_draws is not None:
        _write_frame(chain.mu_frame(), paths["mu.csv"])
        _write_frame(_mu_mean_frame(chain.mu_mean), paths["mu_mean.csv"])
        projection = summaries.posterior_projection(chain.mu_draws, data.X)
        _write_frame(_projection_frame(projection, data.columns), paths["projection_draws.csv"])
    write_metadata(paths[METADATA_FILE], context, results)
    print(f"spikegp: 后验包含概率 {results['inclusion_probability']:.4f}")


def _fit_gbart(context: _Context, data: Dataset) -> None:
    section = context.config.get("gbart", {})
    prior = BartPrior.from_dict(section)
    run_config = GbartRunConfig.from_dict(section)
    names = ["chain.csv", "mu_mean.csv", "sigma_trace.svg", METADATA_FILE]
    if run_config.store_mu:
        names += ["mu.csv", "projection_draws.csv"]
    paths = dict(zip(names, prepare_outputs(context.output_dir, names, context.run.force)))

    if run_config.linear_component:
        data = data.with_intercept()
    chain = fit_gbart(data, prior, run_config, derive_rng(context.master_seed, "fit|gbart", 0), context.run.progress)
    _write_frame(chain.to_frame(["sigma", "all_empty", "r2"], beta_names=data.columns), paths["chain.csv"])
    _write_frame(_mu_mean_frame(chain.mu_mean), paths["mu_mean.csv"])
    plot_trace(chain.scalar("sigma"), paths["sigma_trace.svg"], "sigma")
    design = data.with_intercept()
    all_empty = float(np.mean(chain.scalar("all_empty")))
    results = {"model": chain.metadata["sampler"], "all_empty_fraction": all_empty,
               "acceptance_rates": chain.metadata["acceptance_rates"], "sigma_prior": chain.metadata["sigma_prior"],
               "overall_r2": _overall_r2(chain.mu_mean, design.X)}
    if chain.mu_draws is not None:
        _write_frame(chain.mu_frame(), paths["mu.csv"])
        projection = summaries.posterior_projection(chain.mu_draws, design.X)
        _write_frame(_projection_frame(projection, design.columns), paths["projection_draws.csv"])
    write_metadata(paths[METADATA_FILE], context, results)
    print(f"gbart: 全空森林的后验比例 {all_empty:.4f}")


def _run_fit_command(context: _Context) -> None:
    if len(context.run.inputs) != 1:
        raise ValueError("fit 需要一个数据文件参数")
    data = parse_dataset(context.run.inputs[0])
    handlers = {"gp": _fit_gp, "spikegp": _fit_spikegp, "gbart": _fit_gbart}
    handlers[context.run.target](context, data)


def _run_summarize_command(context: _Context) -> None:
    if len(context.run.inputs) != 2:
        raise ValueError("summarize 需要 mu 文件与数据文件两个参数")
    mu = read_mu_csv(context.run.inputs[0])
    data = parse_dataset(context.run.inputs[1])
    if mu.shape[1] != data.n:
        raise ValueError(f"mu 的长度 {mu.shape[1]} 与数据集行数 {data.n} 不一致")
    design = data.with_intercept()
    section = context.config.get("summaries", {})
    kind = context.run.target

    if kind == "project-linear":
        draws_path, overall_path, metadata_path = prepare_outputs(
            context.output_dir, ["projection_draws.csv", "projection_overall.csv", METADATA_FILE], context.run.force)
        projection = summaries.posterior_projection(mu, design.X)
        _write_frame(_projection_frame(projection, design.columns), draws_path)
        _write_frame(_overall_frame(projection.overall, design.columns), overall_path)
        results = {"overall_r2": projection.overall.r_squared,
                   "posterior_r2_mean": float(np.nanmean(projection.r_squared))}
        print(f"project-linear: 整体摘要 R² = {projection.overall.r_squared:.4f}")

    elif kind == "kl-logistic":
        draws_path, overall_path, metadata_path = prepare_outputs(
            context.output_dir, ["kl_projection.csv", "kl_overall.csv", METADATA_FILE], context.run.force)
        tol = float(section.get("kl_tol", 1e-10))
        max_iter = int(section.get("kl_max_iter", 100))
        betas = np.vstack([summaries.kl_projection_logistic(row, design.X, tol, max_iter) for row in mu])
        frame = pd.DataFrame({"draw": np.arange(1, betas.shape[0] + 1)})
        for j, name in enumerate(design.columns):
            frame[f"beta_{name}"] = betas[:, j]
        _write_frame(frame, draws_path)
        overall = summaries.kl_projection_logistic(mu.mean(axis=0), design.X, tol, max_iter)
        _write_frame(pd.DataFrame([{f"beta_{name}": overall[j] for j, name in enumerate(design.columns)}]), overall_path)
        results = {"draws": int(betas.shape[0])}
        print(f"kl-logistic: {betas.shape[0]} 次抽样的 KL 投影写入 {draws_path}")

    else:
        text_path, dot_path, metadata_path = prepare_outputs(
            context.output_dir, ["cart_tree.txt", "cart_tree.dot", METADATA_FILE], context.run.force)
        mu_hat = mu.mean(axis=0)
        projection = summaries.linear_projection(mu_hat, design.X)
        residuals = mu_hat - design.X @ projection.beta_star
        cart = summaries.cart_residual_fit(residuals, data.X, int(section.get("depth_limit", 3)),
                                           int(section.get("min_leaf", 10)))
        with open(text_path, "w", encoding="utf-8") as f:
            f.write(cart.render_text(data.columns))
        with open(dot_path, "w", encoding="utf-8") as f:
            f.write(cart.render_dot(data.columns))
        results = {"overall_r2": projection.r_squared, "leaves": len(cart.leaf_sizes)}
        print(cart.render_text(data.columns), end="")

    write_metadata(metadata_path, context, {"summary": kind, **results})


def _run_prior_check_command(context: _Context) -> None:
    section = context.config.get("gbart", {})
    options = context.run.options
    prior = BartPrior(
        num_trees=int(options.get("trees") if options.get("trees") is not None else section.get("num_trees", 200)),
        branch_a=float(options.get("a") if options.get("a") is not None else section.get("branch_a", 0.95)),
        branch_b=float(options.get("b") if options.get("b") is not None else section.get("branch_b", 2.0)),
        sigma_mu=float(section.get("sigma_mu", 0.5)),
    )
    draws = int(options.get("draws") or context.config.get("prior_check", {}).get("draws", 10000))
    csv_path, metadata_path = prepare_outputs(context.output_dir, ["prior_check.csv", METADATA_FILE], context.run.force)

    stats = prior_check(prior, np.array([[0.0, 1.0]]), draws, derive_rng(context.master_seed, "prior-check|bart", 0))
    frame = pd.DataFrame([{"statistic": name, **values} for name, values in stats.items()])
    _write_frame(frame, csv_path)
    for name, values in stats.items():
        print(f"{name}: empirical {values['empirical']:.5f} expected {values['expected']:.5f} "
              f"(se {values['se']:.5f}, within 3 se: {values['within_3se']})")
    write_metadata(metadata_path, context, {"prior": prior.__dict__.copy(), "draws": draws, "statistics": stats})


def dispatch(run_config: RunConfig) -> int:
    """
    执行一次命令

    Returns:
        退出码：0 成功；1 运行错误（stderr 一行 "error: <类型>: <信息>"）；2 用法错误
    """
    if run_config.command not in COMMANDS or run_config.target not in TARGETS.get(run_config.command, ()):
        print(USAGE, file=sys.stderr)
        return 2
    try:
        context = _resolve(run_config)
        logger.info(f"执行 {run_config.command} {run_config.target}，主种子 {context.master_seed}，"
                    f"输出目录 {context.output_dir}")
        handlers = {
            "experiment": _run_experiment_command,
            "fit": _run_fit_command,
            "summarize": _run_summarize_command,
            "prior-check": _run_prior_check_command,
        }
        handlers[run_config.command](context)
        return 0
    except Exception as e:
        logger.debug(traceback.format_exc())
        message = str(e).replace("\n", " ")
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1


__all__ = ["RunConfig", "dispatch", "parse_dataset", "write_dataset", "read_mu_csv", "prepare_outputs", "write_metadata"]

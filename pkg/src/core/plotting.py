"""
实验结果的 SVG 折线图
"""
import os
import logging
from typing import List

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


def _save(fig, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    logger.info(f"图已保存: {path}")


def _panels(count: int, width: float = 4.0, height: float = 3.2):
    count = max(count, 1)
    fig, axes = plt.subplots(1, count, figsize=(width * count, height), squeeze=False)
    return fig, list(axes[0])


def plot_rate(summary: pd.DataFrame, path: str) -> None:
    """MSE 对 N 的双对数折线，每个 (sigma0, lambda0) 一个子图，每种方法一条线"""
    frame = summary[summary["metric"] == "mse"]
    cells: List = sorted({(s, l) for s, l in zip(frame["sigma0"], frame["lambda0"])})
    fig, axes = _panels(len(cells))
    for ax, (sigma0, lambda0) in zip(axes, cells):
        cell = frame[(frame["sigma0"] == sigma0) & (frame["lambda0"] == lambda0)]
        for method, rows in cell.groupby("method"):
            rows = rows.sort_values("N")
            ax.errorbar(rows["N"], rows["mean"], yerr=rows["se"], marker="o", capsize=2, label=method)
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("N")
        ax.set_ylabel("MSE")
        ax.set_title(f"sigma0 = {sigma0:g}, lambda0 = {lambda0:g}")
        ax.grid(True, which="both", alpha=0.3)
    if cells:
        axes[0].legend()
    _save(fig, path)


def plot_selection(summary: pd.DataFrame, path: str) -> None:
    """包含概率对 lambda0 的折线，每个 sigma0 一个子图，每个 N 一条线"""
    frame = summary[summary["metric"] == "inclusion_probability"]
    sigmas = sorted(frame["sigma0"].unique())
    fig, axes = _panels(len(sigmas))
    for ax, sigma0 in zip(axes, sigmas):
        cell = frame[frame["sigma0"] == sigma0]
        for n, rows in cell.groupby("N"):
            rows = rows.sort_values("lambda0")
            ax.errorbar(rows["lambda0"], rows["mean"], yerr=rows["se"], marker="o", capsize=2, label=f"N = {n}")
        ax.set_ylim(-0.05, 1.05)
        ax.set_xlabel("lambda0")
        ax.set_ylabel("inclusion probability")
        ax.set_title(f"sigma0 = {sigma0:g}")
        ax.grid(True, alpha=0.3)
    if sigmas:
        axes[0].legend()
    _save(fig, path)


def plot_bvm(summary: pd.DataFrame, path: str) -> None:
    """覆盖率、缩放偏差、缩放方差对 N 的折线，每个核一条线"""
    metrics = [("covered", "coverage", 0.95), ("scaled_bias", "scaled bias", 0.0), ("scaled_variance", "scaled variance", 1.0)]
    fig, axes = _panels(len(metrics))
    for ax, (metric, label, reference) in zip(axes, metrics):
        frame = summary[summary["metric"] == metric]
        for kernel, rows in frame.groupby("kernel"):
            rows = rows.sort_values("N")
            ax.errorbar(rows["N"], rows["mean"], yerr=rows["se"], marker="o", capsize=2, label=kernel)
        ax.axhline(reference, color="grey", linestyle="--", linewidth=1)
        ax.set_xscale("log")
        ax.set_xlabel("N")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    axes[0].legend()
    _save(fig, path)


PLOTTERS = {"rate": plot_rate, "selection": plot_selection, "bvm": plot_bvm}


def plot_experiment(name: str, summary: pd.DataFrame, path: str) -> None:
    if name not in PLOTTERS:
        raise ValueError(f"没有实验 {name} 的绘图函数")
    if summary.empty:
        logger.warning(f"实验 {name} 没有结果，生成空图")
    PLOTTERS[name](summary, path)


def plot_trace(values: np.ndarray, path: str, label: str = "value") -> None:
    """单个标量的 MCMC 轨迹图"""
    fig, axes = _panels(1, width=6.0)
    axes[0].plot(np.arange(1, len(values) + 1), values, linewidth=0.6)
    axes[0].set_xlabel("draw")
    axes[0].set_ylabel(label)
    _save(fig, path)

"""
工具函数模块
"""
import os
import copy
import json
import hashlib
import warnings
from datetime import timedelta
from typing import Optional, Tuple, Dict, Any

import numpy as np
from dotenv import load_dotenv

# 内置默认配置，configs/settings.json 与之保持一致
DEFAULT_CONFIG: Dict[str, Any] = {
    "master_seed": 20240601,
    "threads": 1,
    "output_dir": "output",
    "kernel": {
        "kind": "sum",
        "children": [
            {"kind": "linear", "sigma_beta_sq": 100.0},
            {"kind": "laplace"}
        ]
    },
    "gp": {
        "noise_sd": 1.0,
        "alpha": 1.0,
        "draws": 1000
    },
    "spike_gp": {
        "p0": 0.5,
        "a_sigma_mu": 1.0,
        "b_sigma_mu": 1.0,
        "a_rho": 1.0,
        "b_rho": 1.0,
        "alpha": 1.0,
        "iterations": 4000,
        "burn_in": 1000,
        "proposal_sd": 0.5,
        "orthogonalize": True,
        "a_sigma": 1.0,
        "b_sigma": 1.0,
        "store_mu": "mean"
    },
    "gbart": {
        "num_trees": 200,
        "branch_a": 0.95,
        "branch_b": 2.0,
        "sigma_mu": 0.5,
        "iterations": 4000,
        "burn_in": 1000,
        "alpha": 1.0,
        "linear_component": True,
        "store_mu": False,
        "update_trees": True,
        "fixed_sigma": None,
        "sigma_nu": 3.0,
        "sigma_quantile": 0.9
    },
    "prior_check": {
        "draws": 10000
    },
    "summaries": {
        "depth_limit": 3,
        "min_leaf": 10,
        "kl_tol": 1e-10,
        "kl_max_iter": 100
    },
    "rate_experiment": {
        "n_grid": [64, 128, 256, 512, 1024, 2048, 4096],
        "sigma0_grid": [1.0, 3.0, 5.0],
        "lambda0_grid": [0.0, 0.4],
        "p": 5,
        "replications": 5,
        "methods": ["BART", "GBART", "Linear"]
    },
    "selection_experiment": {
        "n_grid": [200, 400, 800],
        "sigma0_grid": [1.0, 2.0, 4.0],
        "lambda0_grid": [0.0, 0.1, 0.2, 0.4],
        "p": 5,
        "replications": 20
    },
    "bvm_experiment": {
        "n_grid": [250, 500, 1000],
        "p": 5,
        "beta0": 1.55,
        "replications": 200,
        "kernels": ["laplace", "se", "se_linear"],
        "level": 0.95,
        "estimate_sigma": False
    }
}

# 方法描述未给出、由本项目自行确定的默认值，随每次运行写入 metadata.json
DEFAULT_LEDGER: Dict[str, str] = {
    "kernels.laplace_norm": "Laplace 核使用欧氏范数 exp(-||x-x'||_2)，无长度尺度参数",
    "kernels.psd_tolerance": "PSD 容差 1e-8（相对），Gram 矩阵组装后对称化 (K+K^T)/2",
    "kernels.jitter": "仅在 Cholesky 失败时加 1e-10*trace(K)/N 的对角抖动并记录日志，只重试一次",
    "kernels.se_linear_exponent": "se_linear 为 100 x^T x' + exp(-||x-x'||)，指数中使用未平方的范数；se_linear_squared 为平方版本",
    "gp.alpha": "分数后验指数默认 1，通过噪声方差 sigma^2/alpha 解析处理",
    "cli.intercept": "fit gp/spikegp/gbart 与 summarize 都在数据集首列加入 intercept 列（已有时不重复加）；"
                     "BART 基线拟合时不加，但其线性投影摘要同样带截距",
    "cli.overall_r2": "metadata.json 的 overall_r2 为后验均值函数在带截距设计上的摘要 R²，无定义或未记录 mu 时为 null",
    "spike_gp.sigma_sq_prior": "噪声方差先验 InvGam(1,1)",
    "spike_gp.beta_prior": "beta 使用平坦先验",
    "spike_gp.chain": "默认 4000 次迭代、1000 次预烧、对数尺度随机游走步长 0.5，不做自适应",
    "spike_gp.orthogonalize": "默认对 kappa_rho 做正交化（投影核），可关闭",
    "spike_gp.jump": "跨维移动使用 (sigma_mu^2, rho) 的先验提议；排除状态下 rho 以先验为伪先验刷新",
    "gbart.moves": "树移动仅 GROW/PRUNE，各 0.5；切分点在全局取值范围内均匀，空子节点自动拒绝",
    "gbart.sigma_prior": "sigma^2 ~ InvGam(nu/2, nu*lambda/2)，nu=3，lambda 使 P(sigma < 最小二乘残差标准差)=0.9",
    "gbart.num_trees": "树的数量默认 200",
    "gbart.centering": "每次抽样的森林样本内输出中心化，均值并入截距系数",
    "gbart.orthogonalize": "森林不对 X 正交化",
    "gbart.bart_baseline": "BART 基线即关闭线性部分的 GBART",
    "summaries.kl": "KL 投影使用完整二元 KL 散度",
    "summaries.cart": "CART 默认深度上限 3、叶子最少 10 个样本",
    "experiments.rate_p": "速率实验 P 默认 5",
    "experiments.replications": "选择实验 20 次、BvM 实验 200 次重复",
    "experiments.selection_lambda0": "选择实验 lambda0 网格默认 {0, 0.1, 0.2, 0.4}",
    "experiments.bvm_sigma": "BvM 实验按 sigma=1 已知处理，可选用最小二乘残差标准差估计",
    "experiments.seeding": "Philox 位生成器，SeedSequence(entropy=master_seed, spawn_key=(sha256(cell_id) 前两个32位字, rep))",
    "experiments.mcmc_length": "速率与选择实验的 MCMC 长度 4000/1000",
}


def ensure_directory_exists(directory: str) -> bool:
    """
    确保目录存在且有写入权限

    Args:
        directory: 目录路径

    Returns:
        True如果目录存在且可写，否则False
    """
    try:
        os.makedirs(directory, exist_ok=True)

        # 测试写入权限
        test_file = os.path.join(directory, f".write_test_{os.getpid()}.tmp")
        with open(test_file, 'w') as f:
            f.write("test")
        os.remove(test_file)

        return True

    except PermissionError:
        warnings.warn(f"没有写入权限: {directory}")
        return False
    except OSError as e:
        warnings.warn(f"创建目录时出错: {directory}, 错误: {e}")
        return False


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """递归合并两个配置字典，override 中的值优先"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(config_path: Optional[str]) -> Dict[str, Any]:
    """
    加载配置文件

    Args:
        config_path: 配置文件路径，None 表示只使用内置默认值

    Returns:
        配置字典（用户配置覆盖默认配置）

    Raises:
        FileNotFoundError: 指定的配置文件不存在
        ValueError: 配置文件不是合法的 JSON 对象
    """
    if config_path is None:
        return copy.deepcopy(DEFAULT_CONFIG)

    if not os.path.exists(config_path):
        raise FileNotFoundError(f"配置文件不存在: {config_path}")

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            user_config = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"配置文件不是合法的JSON: {config_path}, 错误: {e}") from e

    if not isinstance(user_config, dict):
        raise ValueError(f"配置文件顶层必须是JSON对象: {config_path}")

    return deep_merge(DEFAULT_CONFIG, user_config)


def save_config(config_path: str, config: Dict[str, Any]) -> bool:
    """
    保存配置文件

    Args:
        config_path: 配置文件路径
        config: 配置字典

    Returns:
        True如果成功，否则False
    """
    try:
        directory = os.path.dirname(config_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(config_path, 'w', encoding='utf-8') as f:
            json.dump(config, f, ensure_ascii=False, indent=4, default=_json_default)
        return True
    except (OSError, TypeError) as e:
        warnings.warn(f"保存配置文件失败: {config_path}, 错误: {e}")
        return False


def _json_default(value: Any) -> Any:
    """numpy 标量与数组的 JSON 序列化"""
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"无法序列化的类型: {type(value).__name__}")


def resolve_threads(flag_value: Optional[int], config_value: Optional[int] = None) -> int:
    """
    确定线程数：命令行参数 > 环境变量 DEMEXP_THREADS > 配置文件 > 1

    Args:
        flag_value: --threads 的值
        config_value: 配置文件中的 threads

    Returns:
        正整数线程数
    """
    if flag_value is not None:
        threads = flag_value
    else:
        load_dotenv()
        env_value = os.environ.get("DEMEXP_THREADS")
        if env_value:
            try:
                threads = int(env_value)
            except ValueError as e:
                raise ValueError(f"环境变量 DEMEXP_THREADS 不是整数: {env_value}") from e
        elif config_value is not None:
            threads = int(config_value)
        else:
            threads = 1

    if threads < 1:
        raise ValueError(f"线程数必须为正整数: {threads}")
    return threads


def validate_output_path(output_path: str, overwrite: bool = False) -> Tuple[bool, Optional[str]]:
    """
    验证输出路径

    Args:
        output_path: 输出文件路径
        overwrite: 是否允许覆盖（--force）

    Returns:
        (是否有效, 错误信息)
    """
    output_dir = os.path.dirname(output_path)
    if output_dir and not ensure_directory_exists(output_dir):
        return False, f"无法创建或写入目录: {output_dir}"

    if os.path.exists(output_path) and not overwrite:
        return False, f"文件已存在，如需覆盖请使用 --force: {output_path}"

    return True, None


def cell_key_words(cell_id: str) -> Tuple[int, int]:
    """把单元格标识映射为两个 32 位整数（SHA-256 摘要的前 8 字节，大端）"""
    digest = hashlib.sha256(cell_id.encode('utf-8')).digest()
    return int.from_bytes(digest[0:4], 'big'), int.from_bytes(digest[4:8], 'big')


def format_time(seconds: float) -> str:
    """
    格式化时间（秒 -> 时:分:秒）

    Args:
        seconds: 秒数

    Returns:
        格式化后的时间字符串
    """
    if seconds < 0:
        return "00:00"

    td = timedelta(seconds=int(seconds))

    hours, remainder = divmod(td.seconds, 3600)
    minutes, seconds = divmod(remainder, 60)

    if td.days > 0:
        hours += td.days * 24

    if hours > 0:
        return f"{hours}:{minutes:02d}:{seconds:02d}"
    else:
        return f"{minutes}:{seconds:02d}"

"""
数据集读写
CSV 首行为表头，列 "y" 为响应，其余数值列按表头顺序组成设计矩阵 X
"""
import os
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

TARGET_COLUMN = "y"


@dataclass
class Dataset:
    """
    回归数据集

    Attributes:
        X: N×P 设计矩阵
        y: 长度 N 的响应
        columns: X 的列名
        mu0: 真实回归函数在设计点处的取值（模拟数据才有）
    """
    X: np.ndarray
    y: np.ndarray
    columns: List[str] = field(default_factory=list)
    mu0: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.size:
            raise ValueError(f"设计矩阵行数 {self.X.shape[0]} 与响应长度 {self.y.size} 不一致")
        if not self.columns:
            self.columns = [f"x{j + 1}" for j in range(self.X.shape[1])]
        if len(self.columns) != self.X.shape[1]:
            raise ValueError(f"列名数量 {len(self.columns)} 与设计矩阵列数 {self.X.shape[1]} 不一致")

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def with_intercept(self) -> "Dataset":
        """在首列加入全 1 截距列（已有 intercept 列时原样返回）"""
        if "intercept" in self.columns:
            return self
        X = np.column_stack([np.ones(self.n), self.X])
        return Dataset(X, self.y, ["intercept"] + list(self.columns), self.mu0)


def parse_dataset(path: str) -> Dataset:
    """
    读取数据集 CSV

    Args:
        path: 文件路径

    Returns:
        数据集

    Raises:
        FileNotFoundError: 文件不存在
        ValueError: 空文件、缺少 y 列、非数值或非有限单元格
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"数据文件不存在: {path}")

    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError as e:
        raise ValueError(f"数据文件为空: {path}") from e

    raw.columns = [str(c).strip() for c in raw.columns]
    if TARGET_COLUMN not in raw.columns:
        raise ValueError(f"target column '{TARGET_COLUMN}' not found")
    if raw.shape[0] == 0:
        raise ValueError(f"数据文件没有数据行: {path}")

    stripped = raw.apply(lambda column: column.str.strip())
    numeric = stripped.apply(lambda column: pd.to_numeric(column, errors="coerce"))
    # 字面量 nan 能解析为数值，留给下面的有限性检查报告
    literal_nan = stripped.apply(lambda column: column.str.lower().isin(["nan", "+nan", "-nan"]))

    not_parsed = numeric.isna().to_numpy() & ~literal_nan.to_numpy()
    bad_rows = sorted({int(i) for i in np.nonzero(not_parsed)[0]})
    if bad_rows:
        # 文件行号：表头为第 1 行
        line_numbers = ", ".join(str(i + 2) for i in bad_rows)
        raise ValueError(f"存在非数值单元格，行号: {line_numbers}")

    values = numeric.to_numpy(dtype=float)
    not_finite = np.argwhere(~np.isfinite(values))
    if not_finite.size:
        row, col = not_finite[0]
        raise ValueError(
            f"单元格不是有限数值: 第 {row + 2} 行, 列 '{raw.columns[col]}' = {raw.iat[row, col]}"
        )

    columns = [c for c in raw.columns if c != TARGET_COLUMN]
    dataset = Dataset(numeric[columns].to_numpy(dtype=float), numeric[TARGET_COLUMN].to_numpy(dtype=float), columns)
    logger.info(f"读取数据集 {path}: N={dataset.n}, P={dataset.p}")
    return dataset


def write_dataset(dataset: Dataset, path: str) -> None:
    """按 parse_dataset 的格式写出数据集（浮点数以 17 位有效数字保存）"""
    frame = pd.DataFrame(dataset.X, columns=dataset.columns)
    frame.insert(0, TARGET_COLUMN, dataset.y)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")

"""
MCMC 链存储
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd


@dataclass
class McmcChain:
    """
    按顺序保存的预烧后抽样

    Attributes:
        beta: draws×P 的线性系数
        scalars: 每次抽样的标量（included、sigma_mu_sq、rho、sigma、all_empty、r2 等）
        mu_mean: 样本内 mu 的后验均值（有记录时）
        mu_draws: draws×N 的样本内 mu（按需记录）
        metadata: 链的设置与诊断（接受率、先验标定等）
    """
    beta: np.ndarray
    scalars: Dict[str, np.ndarray] = field(default_factory=dict)
    mu_mean: Optional[np.ndarray] = None
    mu_draws: Optional[np.ndarray] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.beta.shape[0])

    def scalar(self, name: str) -> np.ndarray:
        if name not in self.scalars:
            raise KeyError(f"链中没有标量: {name}")
        return self.scalars[name]

    def to_frame(self, columns: Optional[List[str]] = None, beta_names: Optional[List[str]] = None) -> pd.DataFrame:
        """
        每次抽样一行的表：draw、beta_* 以及各标量

        Args:
            columns: 标量列的顺序（默认按记录顺序）
            beta_names: 系数列名后缀（默认 1..P）
        """
        names = beta_names if beta_names is not None else [str(j + 1) for j in range(self.beta.shape[1])]
        if len(names) != self.beta.shape[1]:
            raise ValueError(f"系数名数量 {len(names)} 与 beta 维度 {self.beta.shape[1]} 不一致")
        frame = pd.DataFrame({"draw": np.arange(1, len(self) + 1)})
        for j, name in enumerate(names):
            frame[f"beta_{name}"] = self.beta[:, j]
        for name in columns if columns is not None else list(self.scalars):
            values = self.scalars[name]
            frame[name] = values.astype(int) if values.dtype == bool else values
        return frame

    def mu_frame(self) -> pd.DataFrame:
        """样本内 mu 抽样的宽表：draw、mu_1..mu_N"""
        if self.mu_draws is None:
            raise ValueError("链没有记录 mu 抽样")
        frame = pd.DataFrame(self.mu_draws, columns=[f"mu_{i + 1}" for i in range(self.mu_draws.shape[1])])
        frame.insert(0, "draw", np.arange(1, len(self) + 1))
        return frame

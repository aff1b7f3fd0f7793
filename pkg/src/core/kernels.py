"""
核函数模块
提供协方差核的声明式描述、Gram 矩阵构建以及正交化（投影）核
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)

LINEAR = "linear"
SQUARED_EXPONENTIAL = "se"
LAPLACE = "laplace"
SCALED = "scaled"
SUM = "sum"
PROJECTED = "projected"

KINDS = (LINEAR, SQUARED_EXPONENTIAL, LAPLACE, SCALED, SUM, PROJECTED)

_KIND_ALIASES = {
    "linear": LINEAR,
    "se": SQUARED_EXPONENTIAL,
    "squared_exponential": SQUARED_EXPONENTIAL,
    "squaredexponential": SQUARED_EXPONENTIAL,
    "laplace": LAPLACE,
    "scaled": SCALED,
    "sum": SUM,
    "projected": PROJECTED,
}

PSD_TOLERANCE = 1e-8
JITTER_SCALE = 1e-10


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky 分解在抖动重试后仍然失败"""


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """
    协方差核的声明式描述，构造后不可变

    Attributes:
        kind: 核类型，取值见 KINDS
        sigma_beta_sq: 线性核系数（linear）
        rho: 逆长度尺度（se）
        amplitude: 子核的乘数（scaled）
        children: 子核（sum 为全部子核，scaled / projected 为唯一子核）
        anchor_design: 定义投影的设计矩阵 X（projected）
    """
    kind: str
    sigma_beta_sq: float = 1.0
    rho: float = 1.0
    amplitude: float = 1.0
    children: Tuple["KernelSpec", ...] = ()
    anchor_design: Optional[np.ndarray] = None
    # projected 核缓存的 (X^T K X)^{-1} 与基核 Gram 矩阵
    _inverse_xkx: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"未知的核类型: {self.kind}")
        object.__setattr__(self, "children", tuple(self.children))
        if self.kind == LINEAR and not self.sigma_beta_sq > 0:
            raise ValueError(f"线性核系数 sigma_beta_sq 必须为正: {self.sigma_beta_sq}")
        if self.kind == SQUARED_EXPONENTIAL and not self.rho > 0:
            raise ValueError(f"逆长度尺度 rho 必须为正: {self.rho}")
        if self.kind == SCALED:
            if not self.amplitude > 0:
                raise ValueError(f"幅度 amplitude 必须为正: {self.amplitude}")
            if len(self.children) != 1:
                raise ValueError("scaled 核需要恰好一个子核")
        if self.kind == PROJECTED and (len(self.children) != 1 or self.anchor_design is None):
            raise ValueError("projected 核需要一个基核和锚定设计矩阵，请使用 project_kernel 构造")

    @property
    def base(self) -> "KernelSpec":
        """scaled / projected 核的子核"""
        return self.children[0]


def linear_kernel(sigma_beta_sq: float = 1.0) -> KernelSpec:
    return KernelSpec(LINEAR, sigma_beta_sq=sigma_beta_sq)


def se_kernel(rho: float = 1.0, amplitude: Optional[float] = None) -> KernelSpec:
    spec = KernelSpec(SQUARED_EXPONENTIAL, rho=rho)
    return scaled_kernel(spec, amplitude) if amplitude is not None else spec


def laplace_kernel(amplitude: Optional[float] = None) -> KernelSpec:
    spec = KernelSpec(LAPLACE)
    return scaled_kernel(spec, amplitude) if amplitude is not None else spec


def scaled_kernel(child: KernelSpec, amplitude: float) -> KernelSpec:
    return KernelSpec(SCALED, amplitude=amplitude, children=(child,))


def sum_kernel(children: Sequence[KernelSpec]) -> KernelSpec:
    return KernelSpec(SUM, children=tuple(children))


def _as_design(X: Any, name: str = "X") -> np.ndarray:
    """把输入整理为二维浮点矩阵"""
    array = np.asarray(X, dtype=float)
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.ndim != 2:
        raise ValueError(f"{name} 必须是二维矩阵，实际维度: {array.ndim}")
    return array


def _cross_matrix(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """未对称化的核矩阵，元素 (m, n) = kappa(A_m, B_n)"""
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))

    if spec.kind == LINEAR:
        return spec.sigma_beta_sq * (A @ B.T)
    if spec.kind == SQUARED_EXPONENTIAL:
        return np.exp(-spec.rho * cdist(A, B, "sqeuclidean"))
    if spec.kind == LAPLACE:
        return np.exp(-cdist(A, B, "euclidean"))
    if spec.kind == SCALED:
        return spec.amplitude * _cross_matrix(spec.base, A, B)
    if spec.kind == SUM:
        total = np.zeros((A.shape[0], B.shape[0]))
        for child in spec.children:
            total = total + _cross_matrix(child, A, B)
        return total

    # projected: kappa(a,b) - k_a^T X (X^T K X)^{-1} X^T k_b
    X = spec.anchor_design
    left = _cross_matrix(spec.base, A, X) @ X
    right = _cross_matrix(spec.base, B, X) @ X
    return _cross_matrix(spec.base, A, B) - left @ spec._inverse_xkx @ right.T


def _check_columns(spec: KernelSpec, X: np.ndarray):
    if spec.kind == PROJECTED and X.shape[1] != spec.anchor_design.shape[1]:
        raise ValueError(
            f"维度不匹配: 输入有 {X.shape[1]} 列，投影核的锚定设计有 {spec.anchor_design.shape[1]} 列"
        )
    for child in spec.children:
        _check_columns(child, X)


def eval_kernel(spec: KernelSpec, x: Any, x_prime: Any) -> float:
    """
    计算单个核值 kappa(x, x')

    Args:
        spec: 核描述
        x: 向量
        x_prime: 与 x 同维的向量

    Returns:
        核值
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.ndim != 1 or x.shape != x_prime.shape:
        raise ValueError(f"维度不匹配: {x.shape} 与 {x_prime.shape}")
    return float(gram(spec, np.vstack([x, x_prime]))[0, 1])


def gram(spec: KernelSpec, X: Any) -> np.ndarray:
    """
    构建 Gram 矩阵 K_ij = kappa(X_i, X_j)

    Args:
        spec: 核描述
        X: N×P 设计矩阵

    Returns:
        对称半正定的 N×N 矩阵
    """
    X = _as_design(X)
    if X.shape[0] == 0:
        raise ValueError("设计矩阵为空，无法构建 Gram 矩阵")
    _check_columns(spec, X)
    return _symmetric_gram(spec, X)


def _symmetric_gram(spec: KernelSpec, X: np.ndarray) -> np.ndarray:
    # sum / scaled 逐项组合已对称的子矩阵，保证 gram(sum) 与子项之和逐元素相等
    if spec.kind == SUM:
        total = np.zeros((X.shape[0], X.shape[0]))
        for child in spec.children:
            total = total + _symmetric_gram(child, X)
        return total
    if spec.kind == SCALED:
        return spec.amplitude * _symmetric_gram(spec.base, X)
    K = _cross_matrix(spec, X, X)
    return (K + K.T) / 2.0


def cross_gram(spec: KernelSpec, X: Any, X_new: Any) -> np.ndarray:
    """
    构建新点与训练点之间的核矩阵

    Args:
        spec: 核描述
        X: N×P 训练设计
        X_new: M×P 新点

    Returns:
        M×N 矩阵，元素 (m, n) = kappa(X_new_m, X_n)
    """
    X = _as_design(X)
    X_new = _as_design(X_new, "X_new")
    if X_new.shape[0] == 0:
        return np.zeros((0, X.shape[0]))
    if X.shape[1] != X_new.shape[1]:
        raise ValueError(f"维度不匹配: X 有 {X.shape[1]} 列，X_new 有 {X_new.shape[1]} 列")
    _check_columns(spec, X)
    return _cross_matrix(spec, X_new, X)


def project_kernel(spec: KernelSpec, X: Any) -> KernelSpec:
    """
    构造正交化（投影）核 kappa*(x,x') = kappa(x,x') - k_x^T X (X^T K X)^{-1} X^T k_x'

    样本内 Gram 矩阵 K* 满足 X^T K* = 0。

    Args:
        spec: 基核
        X: N×P 设计矩阵，必须列满秩

    Returns:
        projected 类型的核描述（锚定设计为 X 的只读副本）
    """
    X = np.array(_as_design(X), dtype=float, copy=True)
    n, p = X.shape
    if n == 0:
        raise ValueError("设计矩阵为空，无法构造投影核")
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        raise ValueError(f"设计矩阵秩亏: rank(X) = {rank} < P = {p}")

    K = gram(spec, X)
    xkx = X.T @ K @ X
    xkx = (xkx + xkx.T) / 2.0
    xkx_rank = np.linalg.matrix_rank(xkx, hermitian=True)
    if xkx_rank < p:
        raise ValueError(f"X^T K X 奇异（秩亏）: rank = {xkx_rank} < P = {p}")

    inverse = np.linalg.inv(xkx)
    inverse = (inverse + inverse.T) / 2.0
    X.setflags(write=False)
    inverse.setflags(write=False)
    return KernelSpec(PROJECTED, children=(spec,), anchor_design=X, _inverse_xkx=inverse)


def stable_cholesky(A: np.ndarray, label: str = "矩阵") -> np.ndarray:
    """
    Cholesky 分解（下三角），失败时加一次 1e-10*trace(A)/N 的对角抖动重试

    Args:
        A: 对称矩阵
        label: 日志中使用的矩阵名称

    Returns:
        下三角因子 L，满足 L L^T = A（或抖动后的 A）

    Raises:
        FactorizationError: 抖动后仍然失败
    """
    try:
        return linalg.cholesky(A, lower=True, check_finite=False)
    except linalg.LinAlgError:
        n = A.shape[0]
        jitter = JITTER_SCALE * float(np.trace(A)) / max(n, 1)
        logger.warning(f"{label} 的 Cholesky 分解失败，加入对角抖动 {jitter:.3e} 后重试")
        if not np.isfinite(jitter) or jitter <= 0:
            raise FactorizationError(f"{label} 不是正定矩阵且无法加入抖动 (trace = {np.trace(A)})")
        try:
            return linalg.cholesky(A + jitter * np.eye(n), lower=True, check_finite=False)
        except linalg.LinAlgError as e:
            raise FactorizationError(f"{label} 在加入抖动 {jitter:.3e} 后仍不正定") from e


def min_relative_eigenvalue(K: np.ndarray) -> float:
    """最小特征值除以谱范数，用于 PSD 检查（空矩阵或零矩阵返回 0）"""
    eigenvalues = linalg.eigvalsh(K)
    scale = float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(eigenvalues[0]) / scale


def kernel_from_dict(config: Dict[str, Any], anchor_design: Optional[np.ndarray] = None) -> KernelSpec:
    """
    从 JSON 配置构造核，例如
    {"kind":"sum","children":[{"kind":"linear","sigma_beta_sq":100.0},{"kind":"se","rho":1.0,"amplitude":1.0}]}

    Args:
        config: 核配置字典
        anchor_design: projected 核使用的设计矩阵

    Returns:
        核描述
    """
    if not isinstance(config, dict) or "kind" not in config:
        raise ValueError(f"核配置缺少 kind 字段: {config}")
    raw_kind = str(config["kind"]).lower()
    if raw_kind not in _KIND_ALIASES:
        raise ValueError(f"未知的核类型: {config['kind']}")
    kind = _KIND_ALIASES[raw_kind]

    if kind == LINEAR:
        spec = linear_kernel(float(config.get("sigma_beta_sq", 1.0)))
    elif kind == SQUARED_EXPONENTIAL:
        spec = KernelSpec(SQUARED_EXPONENTIAL, rho=float(config.get("rho", 1.0)))
    elif kind == LAPLACE:
        spec = KernelSpec(LAPLACE)
    elif kind == SCALED:
        children = config.get("children") or [config.get("child")]
        spec = scaled_kernel(kernel_from_dict(children[0], anchor_design), float(config["amplitude"]))
        return spec
    elif kind == SUM:
        spec = sum_kernel([kernel_from_dict(child, anchor_design) for child in config.get("children", [])])
    else:
        if anchor_design is None:
            raise ValueError("projected 核需要设计矩阵")
        children = config.get("children") or [config.get("child")]
        return project_kernel(kernel_from_dict(children[0], anchor_design), anchor_design)

    if "amplitude" in config:
        spec = scaled_kernel(spec, float(config["amplitude"]))
    return spec


def kernel_to_dict(spec: KernelSpec) -> Dict[str, Any]:
    """核描述的 JSON 表示（projected 核不保存设计矩阵）"""
    if spec.kind == LINEAR:
        return {"kind": LINEAR, "sigma_beta_sq": spec.sigma_beta_sq}
    if spec.kind == SQUARED_EXPONENTIAL:
        return {"kind": SQUARED_EXPONENTIAL, "rho": spec.rho}
    if spec.kind == LAPLACE:
        return {"kind": LAPLACE}
    if spec.kind == SCALED:
        return {"kind": SCALED, "amplitude": spec.amplitude, "children": [kernel_to_dict(spec.base)]}
    if spec.kind == SUM:
        return {"kind": SUM, "children": [kernel_to_dict(child) for child in spec.children]}
    return {"kind": PROJECTED, "children": [kernel_to_dict(spec.base)]}

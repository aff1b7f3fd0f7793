"""
回归树节点
GBART 森林与 CART 残差摘要共用的值语义二叉树
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np


@dataclass(frozen=True)
class Leaf:
    """叶节点，value 为叶子预测值"""
    value: float = 0.0


@dataclass(frozen=True)
class Branch:
    """分支节点：x[split_var] < cutpoint 走左子树，否则走右子树"""
    split_var: int
    cutpoint: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Branch]

# 从根出发的路径，0 表示左，1 表示右
Path = Tuple[int, ...]


def tree_predict(node: TreeNode, X: np.ndarray) -> np.ndarray:
    """单棵树在 X 各行的预测值"""
    X = np.asarray(X, dtype=float)
    if isinstance(node, Leaf):
        return np.full(X.shape[0], node.value, dtype=float)
    goes_left = X[:, node.split_var] < node.cutpoint
    return np.where(goes_left, tree_predict(node.left, X), tree_predict(node.right, X))


def count_leaves(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 1
    return count_leaves(node.left) + count_leaves(node.right)


def count_branches(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + count_branches(node.left) + count_branches(node.right)


def count_prunable(node: TreeNode) -> int:
    """两个子节点都是叶子的分支节点个数"""
    if isinstance(node, Leaf):
        return 0
    if isinstance(node.left, Leaf) and isinstance(node.right, Leaf):
        return 1
    return count_prunable(node.left) + count_prunable(node.right)


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def subtree_at(node: TreeNode, path: Path) -> TreeNode:
    for step in path:
        if isinstance(node, Leaf):
            raise ValueError(f"路径 {path} 超出树的范围")
        node = node.left if step == 0 else node.right
    return node


def replace_at(node: TreeNode, path: Path, replacement: TreeNode) -> TreeNode:
    """返回把 path 处子树替换为 replacement 的新树（沿路径复制）"""
    if not path:
        return replacement
    if isinstance(node, Leaf):
        raise ValueError(f"路径 {path} 超出树的范围")
    if path[0] == 0:
        return Branch(node.split_var, node.cutpoint, replace_at(node.left, path[1:], replacement), node.right)
    return Branch(node.split_var, node.cutpoint, node.left, replace_at(node.right, path[1:], replacement))


@dataclass
class LeafCell:
    """叶子及落入其中的样本行"""
    path: Path
    depth: int
    rows: np.ndarray


def partition(node: TreeNode, X: np.ndarray, rows: Optional[np.ndarray] = None,
              path: Path = (), depth: int = 0) -> List[LeafCell]:
    """按深度优先顺序列出各叶子及其样本行"""
    if rows is None:
        rows = np.arange(X.shape[0])
    if isinstance(node, Leaf):
        return [LeafCell(path, depth, rows)]
    goes_left = X[rows, node.split_var] < node.cutpoint
    return (partition(node.left, X, rows[goes_left], path + (0,), depth + 1)
            + partition(node.right, X, rows[~goes_left], path + (1,), depth + 1))


def prunable_paths(node: TreeNode, path: Path = ()) -> List[Tuple[Path, int]]:
    """两个子节点都是叶子的分支节点 (路径, 深度)"""
    if isinstance(node, Leaf):
        return []
    if isinstance(node.left, Leaf) and isinstance(node.right, Leaf):
        return [(path, len(path))]
    return prunable_paths(node.left, path + (0,)) + prunable_paths(node.right, path + (1,))


def with_leaf_values(node: TreeNode, values: Sequence[float]) -> TreeNode:
    """按深度优先叶子顺序替换叶子值"""
    iterator = iter(values)

    def rebuild(current: TreeNode) -> TreeNode:
        if isinstance(current, Leaf):
            return Leaf(float(next(iterator)))
        return Branch(current.split_var, current.cutpoint, rebuild(current.left), rebuild(current.right))

    return rebuild(node)


def render_text(node: TreeNode, columns: Optional[Sequence[str]] = None, indent: str = "    ") -> str:
    """缩进文本形式"""
    lines: List[str] = []

    def name(j: int) -> str:
        return columns[j] if columns is not None else f"x{j + 1}"

    def walk(current: TreeNode, level: int):
        pad = indent * level
        if isinstance(current, Leaf):
            lines.append(f"{pad}leaf: {current.value:.6g}")
            return
        lines.append(f"{pad}if {name(current.split_var)} < {current.cutpoint:.6g}:")
        walk(current.left, level + 1)
        lines.append(f"{pad}else:  # {name(current.split_var)} >= {current.cutpoint:.6g}")
        walk(current.right, level + 1)

    walk(node, 0)
    return "\n".join(lines) + "\n"


def render_dot(node: TreeNode, columns: Optional[Sequence[str]] = None, counts: Optional[Sequence[int]] = None) -> str:
    """DOT 图形式（counts 为按深度优先叶子顺序的样本数，可选）"""
    lines = ["digraph tree {", '    node [shape=box, fontname="Helvetica"];']
    next_id = [0]
    leaf_index = [0]

    def name(j: int) -> str:
        return columns[j] if columns is not None else f"x{j + 1}"

    def walk(current: TreeNode) -> int:
        node_id = next_id[0]
        next_id[0] += 1
        if isinstance(current, Leaf):
            label = f"{current.value:.4g}"
            if counts is not None:
                label += f"\\nn = {counts[leaf_index[0]]}"
            leaf_index[0] += 1
            lines.append(f'    n{node_id} [label="{label}", style=rounded];')
            return node_id
        lines.append(f'    n{node_id} [label="{name(current.split_var)} < {current.cutpoint:.4g}"];')
        left_id = walk(current.left)
        right_id = walk(current.right)
        lines.append(f'    n{node_id} -> n{left_id} [label="yes"];')
        lines.append(f'    n{node_id} -> n{right_id} [label="no"];')
        return node_id

    walk(node)
    lines.append("}")
    return "\n".join(lines) + "\n"

# Package initialization
"""
防御性模型扩展：以线性子模型为锚的非参数贝叶斯回归
"""
__version__ = "1.0.0"
__author__ = "demexp developers"

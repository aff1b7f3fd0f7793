#!/usr/bin/env python3
"""
防御性模型扩展命令行启动脚本
"""
import sys
import os

# ====================================================
# 1. 添加项目根目录到Python模块搜索路径
# ====================================================

if hasattr(sys, '_MEIPASS'):
    # 打包后的环境，使用临时目录作为项目根目录
    project_root = sys._MEIPASS
else:
    project_root = os.path.dirname(os.path.abspath(__file__))

sys.path.insert(0, project_root)

src_dir = os.path.join(project_root, 'src')
sys.path.insert(0, src_dir)

# ====================================================
# 2. 依赖检查
# ====================================================

REQUIRED_PACKAGES = [
    ("numpy", "numpy"),
    ("scipy", "scipy"),
    ("pandas", "pandas"),
    ("matplotlib", "matplotlib"),
    ("tqdm", "tqdm"),
    ("dotenv", "python-dotenv"),
]


def check_dependencies():
    """检查必要依赖"""
    missing_deps = []

    for module, package in REQUIRED_PACKAGES:
        try:
            __import__(module)
        except ImportError:
            missing_deps.append(package)

    if missing_deps:
        print("缺少必要的依赖包:", file=sys.stderr)
        for dep in missing_deps:
            print(f"  - {dep}", file=sys.stderr)
        print("\n请运行以下命令安装:", file=sys.stderr)
        print(f"pip install {' '.join(missing_deps)}", file=sys.stderr)
        return False

    return True


# ====================================================
# 3. 主函数
# ====================================================

def main():
    """主函数"""
    if not check_dependencies():
        sys.exit(1)

    try:
        from src.main import main as app_main
    except ImportError as e:
        print(f"error: ImportError: 导入模块时出错: {e}", file=sys.stderr)
        sys.exit(1)

    sys.exit(app_main())


if __name__ == "__main__":
    main()

import sys
import os
import logging
import argparse

# 检查是否在PyInstaller打包后的环境中运行
if hasattr(sys, '_MEIPASS'):
    current_dir = sys._MEIPASS
else:
    current_dir = os.path.dirname(os.path.abspath(__file__))

# 添加src目录到Python路径
sys.path.append(current_dir)

from core import __version__
from core.cli_io import RunConfig, TARGETS, dispatch


def build_parser() -> argparse.ArgumentParser:
    """命令行解析器：公共选项可以出现在子命令之后"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", dest="config_path", default=None, help="JSON 配置文件")
    common.add_argument("--seed", dest="master_seed", type=int, default=None, help="主种子（64 位无符号整数）")
    common.add_argument("--out", dest="output_dir", default=None, help="输出目录")
    common.add_argument("--threads", type=int, default=None, help="线程数（默认取 DEMEXP_THREADS 或配置文件）")
    common.add_argument("--force", action="store_true", help="覆盖已有结果文件")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="日志级别")
    common.add_argument("--no-progress", dest="progress", action="store_false", help="不显示进度条")

    parser = argparse.ArgumentParser(
        prog="run.py",
        description="防御性模型扩展：GP / spike-GP / GBART 采样器、投影摘要与模拟实验",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    experiment = commands.add_parser("experiment", parents=[common], help="运行模拟实验")
    experiment.add_argument("target", choices=TARGETS["experiment"])

    fit = commands.add_parser("fit", parents=[common], help="拟合模型并输出抽样")
    fit.add_argument("target", choices=TARGETS["fit"])
    fit.add_argument("data", help="数据 CSV（y 列为响应）")

    summarize = commands.add_parser("summarize", parents=[common], help="后验投影摘要")
    summarize.add_argument("target", choices=TARGETS["summarize"])
    summarize.add_argument("mu", help="mu CSV（mu 列或 mu_1..mu_N 列）")
    summarize.add_argument("data", help="数据 CSV")

    prior = commands.add_parser("prior-check", parents=[common], help="BART 先验的蒙特卡洛检查")
    prior.add_argument("target", choices=TARGETS["prior-check"])
    prior.add_argument("--trees", type=int, default=None, help="树的棵数 T")
    prior.add_argument("--a", type=float, default=None, help="分支概率参数 a")
    prior.add_argument("--b", type=float, default=None, help="深度衰减参数 b")
    prior.add_argument("--draws", type=int, default=None, help="蒙特卡洛抽样次数")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    inputs = []
    if args.command == "fit":
        inputs = [args.data]
    elif args.command == "summarize":
        inputs = [args.mu, args.data]
    options = {}
    if args.command == "prior-check":
        options = {"trees": args.trees, "a": args.a, "b": args.b, "draws": args.draws}

    run_config = RunConfig(
        command=args.command,
        target=args.target,
        inputs=inputs,
        config_path=args.config_path,
        master_seed=args.master_seed,
        output_dir=args.output_dir,
        threads=args.threads,
        force=args.force,
        options=options,
        argv=argv,
        progress=args.progress,
    )
    return dispatch(run_config)


if __name__ == "__main__":
    sys.exit(main())

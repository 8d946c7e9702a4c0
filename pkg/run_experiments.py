#!/usr/bin/env python3
"""
实验脚本 - 依次运行 config/experiments/ 下的实验描述文件并生成报告

用法:
    python run_experiments.py                    # 全部启用的实验
    python run_experiments.py 1x2_fractional_reg # 指定实验
    python run_experiments.py --include-disabled # 包含默认关闭的 2x3
"""

import argparse
import sys
from pathlib import Path

sys.path.append('.')

from auction.config.settings import EXPERIMENT_DIR, OUTPUT_DIR, setup_logging
from auction.config.unified_config import get_config, load_experiment_spec
from auction.experiments.suite import run_all
from auction.tools.report_tool import build_report


def main():
    parser = argparse.ArgumentParser(description="桌面规模实验套件")
    parser.add_argument("names", nargs="*", help="实验名（缺省为全部）")
    parser.add_argument("--include-disabled", action="store_true")
    parser.add_argument("--retrain", action="store_true", help="忽略已有模型重新训练")
    parser.add_argument("--out", default=OUTPUT_DIR)
    args = parser.parse_args()

    setup_logging()
    specs = [load_experiment_spec(str(p)) for p in sorted(Path(EXPERIMENT_DIR).glob("*.yaml"))]
    if args.names:
        specs = [s for s in specs if s.name in args.names]
    if args.include_disabled:
        for s in specs:
            s.enabled = True

    print("=" * 60)
    print(f"实验套件: {len(specs)} 个实验")
    print("=" * 60)
    summary = run_all(specs, args.out, deterministic=get_config().system.deterministic, retrain=args.retrain)
    for name, table in build_report(summary).items():
        print(f"\n== {name} ==")
        print(table.to_string(index=False))


if __name__ == "__main__":
    main()

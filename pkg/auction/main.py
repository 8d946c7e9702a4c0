#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
可认证拍卖 - 命令行入口

子命令: gen-data / train / distill / evaluate / certify / report
参数错误返回2（argparse），运行时错误返回1并输出诊断信息。
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from auction.config.settings import OUTPUT_DIR, setup_logging
from auction.config.unified_config import IRMode, RunConfig, UnifiedConfigManager, config_to_dict
from auction.training.dataset import generate_dataset
from auction.training.evaluation import clip_payments, evaluate, ir_violation_report
from auction.training.trainer import AuctionTrainer
from auction.verification.certifier import certificates_frame, certify_batch
from auction.tools.model_store import (
    RunManifest, load_dataset, load_model, manifest_path_for, read_csv, save_dataset, save_model, write_csv,
)
from auction.tools.report_tool import build_report, combine_summaries
from auction.tools.metrics_tool import metrics_tool
from auction.exceptions import ExceptionHandler, InvalidConfigurationError, handle_exception

DEFAULT_CONFIG = "config/auction_config.yaml"


def _load_config(path: Optional[str]) -> RunConfig:
    return UnifiedConfigManager(path or DEFAULT_CONFIG).config


def _save_manifest(command: str, config, seed: int, inputs: List[str], outputs: List[str]) -> str:
    manifest = RunManifest(command=command, config=config, seed=seed, inputs=inputs, outputs=outputs)
    return manifest.save(manifest_path_for(outputs[0]))


def _profiles(args, n_agents: int, n_items: int):
    """--data 指定的数据集，否则按 --count/--seed 生成"""
    if args.data:
        dataset = load_dataset(args.data)
        if (dataset.n_agents, dataset.n_items) != (n_agents, n_items):
            raise InvalidConfigurationError("data", args.data,
                                            f"dataset is {dataset.n_agents}x{dataset.n_items}, model is {n_agents}x{n_items}")
        return dataset.profiles, [args.data]
    return generate_dataset(n_agents, n_items, args.count, args.seed).profiles, []


# ============ 子命令 ============

def cmd_gen_data(args) -> int:
    dataset = generate_dataset(args.n, args.k, args.count, args.seed, args.low, args.high)
    out = args.out or str(Path(OUTPUT_DIR) / "datasets" / f"{args.n}x{args.k}_seed{args.seed}.json")
    save_dataset(dataset, out)
    _save_manifest("gen-data", {"n": args.n, "k": args.k, "count": args.count,
                                "low": args.low, "high": args.high}, args.seed, [], [out])
    return 0


def _train_common(args, config: RunConfig, teacher=None) -> int:
    auction, train = config.auction, config.train
    if args.seed is not None:
        train = replace(train, seed=args.seed)
    if args.epochs is not None:
        train = replace(train, epochs=args.epochs)

    inputs = []
    if args.data:
        dataset = load_dataset(args.data)
        inputs.append(args.data)
    else:
        dataset = generate_dataset(auction.n_agents, auction.n_items, train.train_count, train.seed)
    if teacher is not None:
        inputs.append(args.teacher)

    trainer = AuctionTrainer(auction, train, relu_reg=args.relu_reg, teacher=teacher,
                             deterministic=config.system.deterministic)
    net, log = trainer.train(dataset)
    if args.clip:
        net = clip_payments(net)

    log_path = args.log or str(Path(args.out).with_suffix("")) + "_log.csv"
    save_model(net, args.out)
    run_config = config_to_dict(replace(config, train=train, auction=auction))
    run_config["relu_reg"] = args.relu_reg
    manifest = _save_manifest(args.command, run_config, train.seed, inputs, [args.out, log_path])
    write_csv(log.to_frame(), log_path, manifest)
    return 0


def cmd_train(args) -> int:
    return _train_common(args, _load_config(args.config))


def cmd_distill(args) -> int:
    config = _load_config(args.config)
    teacher = load_model(args.teacher)
    # 蒸馏的学生总是直接输出支付的网络
    config = replace(config, auction=replace(config.auction, ir_mode=IRMode.PENALTY_FREE))
    return _train_common(args, config, teacher)


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    net = load_model(args.model)
    profiles, inputs = _profiles(args, net.config.n_agents, net.config.n_items)
    steps = config.train.misreport_steps_eval if args.steps is None else args.steps
    result = evaluate(net, profiles, steps, args.lr)

    summary = dict(result.summary)
    if args.ir_report:
        summary.update({f"ir_{k}": v for k, v in ir_violation_report(net, profiles).items() if k != "setting"})
    out = args.out or str(Path(OUTPUT_DIR) / "evaluation.csv")
    summary_path = str(Path(out).with_suffix("")) + "_summary.csv"
    manifest = _save_manifest("evaluate", {"steps": steps, "lr": args.lr, "count": len(profiles)},
                              args.seed, [args.model] + inputs, [out, summary_path])
    write_csv(result.points, out, manifest)
    write_csv(pd.DataFrame([summary]), summary_path, manifest)
    print(json.dumps(summary, indent=2, ensure_ascii=False))
    return 0


def cmd_certify(args) -> int:
    config = _load_config(args.config)
    certify = config.certify
    overrides = {k: v for k, v in (("tolerance", args.tolerance), ("node_limit", args.node_limit),
                                   ("workers", args.workers), ("bound_method", args.bound_method),
                                   ("empirical_steps", args.empirical_steps)) if v is not None}
    certify = replace(certify, **overrides)

    net = load_model(args.model)
    profiles, inputs = _profiles(args, net.config.n_agents, net.config.n_items)
    out = args.out or str(Path(OUTPUT_DIR) / "certificates.csv")
    manifest = _save_manifest("certify", asdict(certify), args.seed, [args.model] + inputs, [out])

    certificates = []
    try:
        certify_batch(net, profiles, agents=args.agents, config=certify,
                      deterministic=config.system.deterministic, results=certificates)
    finally:
        write_csv(certificates_frame(certificates), out, manifest)
        metrics_tool.save_metrics(str(Path(out).with_suffix("")) + "_metrics.json")

    regrets = np.array([c.certified_regret for c in certificates])
    incomplete = sum(not c.complete for c in certificates)
    print(f"certified {len(certificates)} points: mean regret {regrets.mean():.6f}, "
          f"max {regrets.max():.6f}, incomplete {incomplete}")
    return 0


def cmd_report(args) -> int:
    frames, ir_reports, inputs = [], [], []
    for path in args.inputs:
        p = Path(path)
        files = [p]
        if p.is_dir():
            files = sorted(p.glob("*/summary.csv")) or [f for f in [p / "summary.csv"] if f.exists()]
        for f in files:
            frame, _ = read_csv(str(f))
            frames.append(frame)
            inputs.append(str(f))
            ir_file = f.with_name("ir_violation.csv")
            if ir_file.exists():
                ir_frame, _ = read_csv(str(ir_file))
                ir_reports.extend(ir_frame.to_dict("records"))
                inputs.append(str(ir_file))

    tables = build_report(combine_summaries(frames), ir_reports)
    out_dir = Path(args.out or OUTPUT_DIR)
    outputs = [str(out_dir / f"{name}.csv") for name in tables]
    manifest = _save_manifest("report", {"inputs": list(args.inputs)}, 0, inputs, outputs)
    for name, table in tables.items():
        write_csv(table, str(out_dir / f"{name}.csv"), manifest)
        print(f"\n== {name} ==")
        print(table.to_string(index=False))
    return 0


# ============ 参数解析 ============

def _add_points_args(parser: argparse.ArgumentParser):
    parser.add_argument("--data", help="数据集文件（缺省时按 --count/--seed 生成）")
    parser.add_argument("--count", type=int, default=100)
    parser.add_argument("--seed", type=int, default=1)


def _add_train_args(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help=f"YAML配置文件（默认 {DEFAULT_CONFIG}）")
    parser.add_argument("--data", help="训练数据集文件（缺省时按训练种子生成）")
    parser.add_argument("--out", required=True, help="输出模型文件")
    parser.add_argument("--log", help="训练日志CSV")
    parser.add_argument("--relu-reg", action="store_true", help="启用ReLU稳定性正则")
    parser.add_argument("--clip", action="store_true", help="导出带支付裁剪标志的模型")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="auction", description="可认证学习型拍卖: 训练、评估与遗憾认证")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="生成按种子采样的估值数据集")
    p.add_argument("--n", type=int, required=True, help="买家数")
    p.add_argument("--k", type=int, required=True, help="物品数")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--low", type=float, default=0.0)
    p.add_argument("--high", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="增广拉格朗日训练")
    _add_train_args(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("distill", help="从教师模型蒸馏直接支付网络")
    _add_train_args(p)
    p.add_argument("--teacher", required=True, help="教师模型文件")
    p.set_defaults(handler=cmd_distill)

    p = sub.add_parser("evaluate", help="收益与PGD经验遗憾")
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    _add_points_args(p)
    p.add_argument("--steps", type=int, help="PGD步数（默认1000）")
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--ir-report", action="store_true", help="附加IR违反统计")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("certify", help="逐点遗憾认证")
    p.add_argument("--model", required=True)
    p.add_argument("--config")
    _add_points_args(p)
    p.add_argument("--agents", type=int, nargs="+")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--bound-method", choices=["planet", "ibp"])
    p.add_argument("--empirical-steps", type=int)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_certify)

    p = sub.add_parser("report", help="汇总CSV生成主结果表")
    p.add_argument("--inputs", nargs="+", required=True, help="summary.csv 文件或实验输出目录")
    p.add_argument("--out", help="报告输出目录")
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    setup_logging(args.log_level)

    try:
        return args.handler(args)
    except Exception as e:
        info = handle_exception(e, {"command": args.command})
        logging.error(f"{args.command} 失败 [{info['severity']}]: {info['exception_info']['message']}")
        print(f"error: {info['exception_info']['message']}", file=sys.stderr)
        return ExceptionHandler.exit_code(e)


if __name__ == "__main__":
    sys.exit(main())

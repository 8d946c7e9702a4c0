#!/usr/bin/env python3
"""
可认证拍卖演示脚本
小网络上走一遍：训练 → 评估 → 认证一个点 → 打印证书
"""

import sys
from dataclasses import replace

sys.path.append('.')

from auction.config.settings import setup_logging
from auction.config.unified_config import AuctionConfig, CertifyConfig, TrainConfig
from auction.models.auction_net import forward
from auction.training.dataset import generate_dataset
from auction.training.evaluation import evaluate, myerson_baseline
from auction.training.trainer import train
from auction.verification.certifier import certify_regret


def demo():
    print("=" * 60)
    print("可认证拍卖 - 功能演示 (1 买家 x 2 物品)")
    print("=" * 60)
    setup_logging()

    auction = AuctionConfig(n_agents=1, n_items=2, trunk_widths=[12])
    train_config = TrainConfig(batch_size=100, epochs=5, train_count=1000, stability_weight=0.01)

    print("\n1. 训练（ReLU稳定性正则）...")
    dataset = generate_dataset(1, 2, train_config.train_count, seed=0)
    net, log = train(auction, train_config, dataset, relu_reg=True)
    print(f"   最后一轮: 收益 {log.last['revenue']:.4f}，遗憾 {log.last['regret_mean']:.5f}")

    print("\n2. 评估（200步PGD）...")
    test = generate_dataset(1, 2, 200, seed=1).profiles
    result = evaluate(net, test, steps=200)
    print(f"   收益 {result.summary['revenue_mean']:.4f} (Myerson基线 {myerson_baseline(1, 2):.4f})")
    print(f"   经验遗憾 {result.summary['regret_mean']:.5f}")

    print("\n3. 认证一个估值点...")
    profile = test[0]
    out = forward(net, profile)
    print(f"   估值 {profile[0]}，分配 {out.allocation[0]}，支付 {out.payment[0]:.4f}")
    cert = certify_regret(net, profile, agent=0, config=replace(CertifyConfig(), empirical_steps=200))
    print(f"   认证遗憾 {cert.certified_regret:.6f}，经验遗憾 {cert.empirical_regret:.6f}")
    print(f"   最优误报 {cert.incumbent_misreport}，节点 {cert.nodes_explored}，"
          f"残差 {cert.consistency_residual:.1e}，状态 {cert.status}")

    print("\n[SUCCESS] 演示完成")


if __name__ == "__main__":
    demo()

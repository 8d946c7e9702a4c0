"""
评估工具 - 收益、经验遗憾、IR违反统计、支付裁剪与Myerson基线
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict

import numpy as np
import pandas as pd
import torch

from auction.config.settings import IR_EPSILON
from auction.config.unified_config import IRMode
from auction.models.auction_net import AuctionNet, as_bids_tensor, forward, forward_tensors
from auction.training.misreport import search_misreports
from auction.exceptions import InvalidConfigurationError


def myerson_baseline(n_agents: int, n_items: int) -> float:
    """逐物品Myerson拍卖在 U[0,1] 估值下的期望收益（保留价0.5）"""
    n = n_agents
    per_item = (n - 1) / (n + 1) + 2.0 ** (-n) / (n + 1)
    return n_items * per_item


def clip_payment_values(payment, value):
    """p ← clamp(p, 0, Σ_j a_ij b_ij)"""
    return np.minimum(np.maximum(payment, 0.0), value)


def clip_payments(net: AuctionNet) -> AuctionNet:
    """导出带支付裁剪标志的模型；认证器据此编码裁剪约束"""
    if net.config.ir_mode is not IRMode.PENALTY_FREE:
        raise InvalidConfigurationError("clip_payments", net.config.ir_mode.value,
                                        "only penalty_free payments can be clipped")
    provenance = dict(net.provenance, clipped=True)
    return replace(net, clip_payments=True, provenance=provenance)


@dataclass
class EvaluationResult:
    """逐点（点×买家）明细与汇总"""
    points: pd.DataFrame
    summary: Dict[str, Any]


def evaluate(net: AuctionNet, profiles: np.ndarray, steps: int, lr: float = 0.02) -> EvaluationResult:
    """测试集上的收益与 steps 步PGD经验遗憾"""
    profiles = np.asarray(profiles, dtype=np.float64)
    outcome = forward(net, profiles)
    search = search_misreports(net, profiles, steps, lr)
    regrets = search.regrets
    n = net.config.n_agents

    rows = []
    for pid in range(profiles.shape[0]):
        for agent in range(n):
            rows.append({
                "profile_id": pid,
                "agent": agent,
                "revenue": float(outcome.payment[pid].sum()),
                "payment": float(outcome.payment[pid, agent]),
                "truthful_utility": float(search.truthful_utilities[pid, agent]),
                "empirical_regret": float(regrets[pid, agent]),
                "misreport": " ".join(f"{x:.17g}" for x in search.misreports[pid, agent]),
            })
    points = pd.DataFrame(rows)
    revenue = outcome.payment.sum(axis=-1)
    summary = {
        "setting": net.config.setting,
        "points": int(profiles.shape[0]),
        "steps": steps,
        "revenue_mean": float(revenue.mean()),
        "revenue_std": float(revenue.std()),
        "regret_mean": float(regrets.mean()),
        "regret_std": float(regrets.std()),
        "regret_max": float(regrets.max()),
        "myerson_baseline": myerson_baseline(n, net.config.n_items),
    }
    logging.info(f"评估完成 {net.config.setting}: 收益 {summary['revenue_mean']:.4f}，"
                 f"经验遗憾 {summary['regret_mean']:.5f} (max {summary['regret_max']:.5f})")
    return EvaluationResult(points=points, summary=summary)


def ir_violation_report(net: AuctionNet, profiles: np.ndarray) -> Dict[str, Any]:
    """裁剪前的IR违反率/幅度及裁剪前后收益"""
    if net.config.ir_mode is not IRMode.PENALTY_FREE:
        raise InvalidConfigurationError("ir_violation_report", net.config.ir_mode.value,
                                        "fractional payments cannot violate IR")
    raw = replace(net, clip_payments=False)
    with torch.no_grad():
        out = forward_tensors(raw, as_bids_tensor(profiles))
    violation = torch.relu(out.payment - out.value).numpy()
    clipped = clip_payment_values(out.payment.numpy(), out.value.numpy())
    revenue_raw = float(out.payment.numpy().sum(axis=-1).mean())
    revenue_clipped = float(clipped.sum(axis=-1).mean())
    report = {
        "setting": net.config.setting,
        "points": int(violation.shape[0]),
        "violation_rate": float(np.mean(violation > IR_EPSILON)),
        "violation_max": float(violation.max()),
        "violation_mean": float(violation.mean()),
        "violation_std": float(violation.std()),
        "revenue_unclipped": revenue_raw,
        "revenue_clipped": revenue_clipped,
        "revenue_drop": (revenue_raw - revenue_clipped) / revenue_raw if revenue_raw > 0 else 0.0,
    }
    logging.info(f"IR违反统计: 比例 {report['violation_rate']:.2%}，均值 {report['violation_mean']:.5f}，"
                 f"收益 {revenue_raw:.4f} → {revenue_clipped:.4f}")
    return report

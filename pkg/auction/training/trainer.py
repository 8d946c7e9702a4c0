"""
增广拉格朗日训练循环

每个批次：PGD搜索误报 → 计算遗憾与IR违反 → 损失（可选稳定性正则、蒸馏项）
→ Adam 更新参数；按周期更新乘子。每个 epoch 输出一行日志。
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
import torch

from auction.config.settings import configure_determinism
from auction.config.unified_config import AuctionConfig, HeadStyle, IRMode, TrainConfig
from auction.models.auction_net import AuctionModule, AuctionNet, as_bids_tensor, forward_tensors
from auction.training.dataset import Dataset
from auction.training.distill import distill_loss
from auction.training.ibp import module_stability_penalty
from auction.training.lagrangian import (
    Multipliers, bump_mu, ir_violations, lagrangian_loss, update_multipliers,
)
from auction.training.misreport import agent_utilities, pgd_misreports
from auction.tools.metrics_tool import metrics_tool
from auction.exceptions import InvalidConfigurationError, ShapeMismatchError, TrainingDivergenceError

LOG_COLUMNS = [
    "epoch", "revenue", "regret_mean", "regret_max", "irv_mean", "loss",
    "lambda_mean", "rho_rgt", "mu_mean", "stability",
]


@dataclass
class TrainLog:
    """逐 epoch 的训练日志"""
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def append(self, row: Dict[str, Any]):
        self.rows.append(row)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=LOG_COLUMNS)

    @property
    def last(self) -> Dict[str, Any]:
        return self.rows[-1] if self.rows else {}


class AuctionTrainer:
    """训练一个拍卖网络；单线程确定性模式下同种子结果逐位一致"""

    def __init__(self, auction_config: AuctionConfig, train_config: TrainConfig,
                 relu_reg: bool = False, teacher: Optional[AuctionNet] = None,
                 deterministic: bool = True, metrics=None):
        self.auction_config = auction_config
        self.train_config = train_config
        self.relu_reg = relu_reg
        self.teacher = teacher
        self.deterministic = deterministic
        self.metrics = metrics or metrics_tool

        if relu_reg and train_config.stability_weight <= 0:
            raise InvalidConfigurationError("stability_weight", train_config.stability_weight,
                                            "relu_reg requires a positive stability weight")
        if teacher is not None:
            if teacher.config.setting != auction_config.setting:
                raise ShapeMismatchError("teacher setting", auction_config.setting, teacher.config.setting)
            if auction_config.ir_mode is not IRMode.PENALTY_FREE:
                raise InvalidConfigurationError("distill", auction_config.ir_mode.value,
                                                "distillation trains a penalty_free student")

    def _teacher_outputs(self, bids: torch.Tensor):
        with torch.no_grad():
            return forward_tensors(self.teacher, bids)

    def train(self, dataset: Dataset) -> Tuple[AuctionNet, TrainLog]:
        cfg, tc = self.auction_config, self.train_config
        if (dataset.n_agents, dataset.n_items) != (cfg.n_agents, cfg.n_items):
            raise ShapeMismatchError("dataset", (cfg.n_agents, cfg.n_items), (dataset.n_agents, dataset.n_items))

        configure_determinism(self.deterministic, tc.seed)
        generator = torch.Generator().manual_seed(tc.seed)
        module = AuctionModule(cfg, generator)
        optimizer = torch.optim.Adam(module.parameters(), lr=tc.lr)
        multipliers = Multipliers.initial(cfg.n_agents, tc)
        penalty_free = cfg.ir_mode is IRMode.PENALTY_FREE
        log = TrainLog()
        batch_count = 0
        started = time.time()

        logging.info(f"开始训练 {cfg.setting} {cfg.ir_mode.value} ({cfg.head_style.value})，"
                     f"{len(dataset)} 个样本，{tc.epochs} 轮，ReLU正则={self.relu_reg}，"
                     f"蒸馏={self.teacher is not None}")

        for epoch in range(tc.epochs):
            sums = {"revenue": 0.0, "regret_mean": 0.0, "irv_mean": 0.0, "loss": 0.0, "stability": 0.0}
            regret_max, seen = 0.0, 0

            for batch_index, batch in enumerate(dataset.batches(tc.batch_size, epoch)):
                bids = as_bids_tensor(batch)
                misreports, _, _ = pgd_misreports(module, bids, tc.misreport_steps_train, tc.misreport_lr)

                out = module(bids)
                regrets = torch.relu(agent_utilities(module, bids, misreports) - out.utility)
                violations = ir_violations(out) if penalty_free else None
                loss = lagrangian_loss(out.payment, regrets, multipliers, violations)

                stability = torch.zeros((), dtype=loss.dtype)
                if self.relu_reg:
                    stability = module_stability_penalty(module)
                    loss = loss + tc.stability_weight * stability
                if self.teacher is not None:
                    loss = loss + distill_loss(out, self._teacher_outputs(bids), tc.distill_weight)

                loss_value = float(loss.detach())
                if not math.isfinite(loss_value):
                    raise TrainingDivergenceError(epoch, batch_index, loss_value)

                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                batch_count += 1

                with torch.no_grad():
                    mean_regret = regrets.mean(dim=0).numpy()
                    mean_irv = violations.mean(dim=0).numpy() if penalty_free else None
                if batch_count % tc.lambda_update_period == 0:
                    multipliers = update_multipliers(multipliers, mean_regret, mean_irv, tc)
                if penalty_free and batch_count % tc.mu_update_period == 0:
                    multipliers = bump_mu(multipliers, tc)

                size = bids.shape[0]
                seen += size
                sums["revenue"] += float(out.payment.detach().sum(dim=-1).sum())
                sums["regret_mean"] += float(regrets.detach().mean(dim=-1).sum())
                sums["irv_mean"] += float(violations.detach().mean(dim=-1).sum()) if penalty_free else 0.0
                sums["loss"] += loss_value * size
                sums["stability"] += float(stability.detach()) * size
                regret_max = max(regret_max, float(regrets.detach().max()))

            row = {"epoch": epoch, **{k: v / seen for k, v in sums.items()}, "regret_max": regret_max}
            row.update(multipliers.to_dict())
            row.pop("rho_irv", None)
            log.append(row)
            self.metrics.record_epoch(cfg.setting, row)
            logging.info(f"epoch {epoch}: 收益 {row['revenue']:.4f} 遗憾 {row['regret_mean']:.5f} "
                         f"(max {regret_max:.5f}) irv {row['irv_mean']:.5f} 损失 {row['loss']:.5f} "
                         f"λ̄ {row['lambda_mean']:.3f} ρ {row['rho_rgt']:.3f}")

        logging.info(f"训练完成，用时 {time.time() - started:.1f}s")
        provenance = {
            "seed": tc.seed,
            "config_hash": tc.config_hash(),
            "epochs": tc.epochs,
            "train_count": len(dataset),
            "dataset_seed": dataset.seed,
            "relu_reg": self.relu_reg,
            "distilled": self.teacher is not None,
        }
        return module.freeze(provenance=provenance), log


def train(auction_config: AuctionConfig, train_config: TrainConfig, dataset: Dataset,
          relu_reg: bool = False, teacher: Optional[AuctionNet] = None,
          deterministic: bool = True) -> Tuple[AuctionNet, TrainLog]:
    """便捷训练函数"""
    return AuctionTrainer(auction_config, train_config, relu_reg, teacher, deterministic).train(dataset)


def teacher_config(student: AuctionConfig) -> AuctionConfig:
    """蒸馏教师：同规模的softmax分配 + sigmoid分数支付网络"""
    return AuctionConfig(
        n_agents=student.n_agents,
        n_items=student.n_items,
        trunk_widths=list(student.trunk_widths),
        ir_mode=IRMode.FRACTIONAL,
        allow_dummy_agent=student.allow_dummy_agent,
        head_style=HeadStyle.REGRETNET,
    )

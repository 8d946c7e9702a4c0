"""
增广拉格朗日损失与乘子更新

损失（逐样本后取批均值）:
    −Σ_i p_i + Σ_i λ_i·rgt_i + (ρ/2)(Σ_i rgt_i)² [+ Σ_i μ_i·irv_i²]
"""

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
import torch

from auction.config.unified_config import IRMode, TrainConfig
from auction.models.auction_net import AuctionNet, OutcomeTensors, as_bids_tensor, forward_tensors
from auction.exceptions import ShapeMismatchError


@dataclass(frozen=True)
class Multipliers:
    """每个买家的拉格朗日乘子及二次项系数"""
    lambdas: np.ndarray
    rho_rgt: float
    mus: np.ndarray
    rho_irv: float
    updates: int = 0

    @classmethod
    def initial(cls, n_agents: int, config: TrainConfig) -> "Multipliers":
        return cls(
            lambdas=np.full(n_agents, config.lambda_init, dtype=np.float64),
            rho_rgt=float(config.rho_rgt_init),
            mus=np.full(n_agents, config.mu_init, dtype=np.float64),
            rho_irv=float(config.rho_irv),
        )

    def to_dict(self):
        return {
            "lambda_mean": float(self.lambdas.mean()),
            "rho_rgt": self.rho_rgt,
            "mu_mean": float(self.mus.mean()),
            "rho_irv": self.rho_irv,
        }


def ir_violations(out: OutcomeTensors) -> torch.Tensor:
    """max(p_i − Σ_j a_ij b_ij, 0)，按出价计算"""
    return torch.relu(out.payment - out.value)


def irv(net: AuctionNet, profile: np.ndarray, agent: int) -> float:
    """真实出价下买家 agent 的IR违反量；分数支付模式下恒为0"""
    if net.config.ir_mode is IRMode.FRACTIONAL:
        return 0.0
    if not 0 <= agent < net.config.n_agents:
        raise ShapeMismatchError("agent", f"[0, {net.config.n_agents})", agent)
    with torch.no_grad():
        out = forward_tensors(net, as_bids_tensor(profile))
    return float(ir_violations(out)[..., agent])


def lagrangian_loss(payments: torch.Tensor, regrets: torch.Tensor, multipliers: Multipliers,
                    violations: Optional[torch.Tensor] = None) -> torch.Tensor:
    """批均值增广拉格朗日损失；输入形状均为 (B, n)"""
    lambdas = torch.as_tensor(multipliers.lambdas, dtype=payments.dtype)
    per_sample = -payments.sum(dim=-1)
    per_sample = per_sample + (lambdas * regrets).sum(dim=-1)
    per_sample = per_sample + 0.5 * multipliers.rho_rgt * regrets.sum(dim=-1) ** 2
    if violations is not None:
        mus = torch.as_tensor(multipliers.mus, dtype=payments.dtype)
        per_sample = per_sample + (mus * violations ** 2).sum(dim=-1)
    return per_sample.mean()


def update_multipliers(state: Multipliers, mean_regret: Union[np.ndarray, float],
                       mean_irv: Union[np.ndarray, float, None], config: TrainConfig) -> Multipliers:
    """λ ← λ + ρ^rgt·rgt；ρ^rgt ← ρ^rgt + inc；μ ← μ + ρ^irv·irv；ρ^irv ← ρ^irv + inc"""
    mean_regret = np.maximum(np.asarray(mean_regret, dtype=np.float64), 0.0)
    mus = state.mus
    if mean_irv is not None:
        mus = mus + state.rho_irv * np.maximum(np.asarray(mean_irv, dtype=np.float64), 0.0)
    return replace(
        state,
        lambdas=state.lambdas + state.rho_rgt * mean_regret,
        rho_rgt=state.rho_rgt + config.rho_rgt_inc,
        mus=mus,
        rho_irv=state.rho_irv + config.rho_irv_inc,
        updates=state.updates + 1,
    )


def bump_mu(state: Multipliers, config: TrainConfig) -> Multipliers:
    """IR惩罚乘子的固定递增计划（每 mu_update_period 个批次 +mu_increment）"""
    return replace(state, mus=state.mus + config.mu_increment)

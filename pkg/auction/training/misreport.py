"""
误报搜索 - 在出价盒上对单个买家的效用做投影梯度上升

所有买家的误报一次性批量求解：对第 a 个买家，只替换出价矩阵的第 a 行，
其他买家保持真实出价。始终返回效用最高的迭代点（而非最后一个迭代点）。
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from auction.models.auction_net import (
    AuctionNet, OutcomeTensors, as_bids_tensor, check_bids_shape, net_activations, net_params,
    outcome_tensors,
)
from auction.exceptions import ShapeMismatchError

OutcomeFn = Callable[[torch.Tensor], OutcomeTensors]


@dataclass
class MisreportResult:
    """批量误报搜索结果；misreports[b, a] 为买家 a 的最优误报行"""
    misreports: np.ndarray
    utilities: np.ndarray
    truthful_utilities: np.ndarray

    @property
    def regrets(self) -> np.ndarray:
        return np.maximum(self.utilities - self.truthful_utilities, 0.0)


def replace_rows(profiles: torch.Tensor, misreports: torch.Tensor) -> torch.Tensor:
    """(B,n,k) 真实出价 + (B,n,k) 误报 → (B,n,n,k)，第 a 个场景只替换第 a 行"""
    n = profiles.shape[-2]
    eye = torch.eye(n, dtype=profiles.dtype).reshape(1, n, n, 1)
    return profiles.unsqueeze(1) * (1.0 - eye) + misreports.unsqueeze(2) * eye


def agent_utilities(outcome_fn: OutcomeFn, profiles: torch.Tensor,
                    misreports: torch.Tensor) -> torch.Tensor:
    """每个买家 a 以 misreports[:, a] 出价、以真实估值计算的效用，形状 (B,n)"""
    out = outcome_fn(replace_rows(profiles, misreports))
    alloc = torch.diagonal(out.allocation, dim1=1, dim2=2).transpose(-1, -2)
    payment = torch.diagonal(out.payment, dim1=1, dim2=2)
    return (alloc * profiles).sum(dim=-1) - payment


def pgd_misreports(outcome_fn: OutcomeFn, profiles: torch.Tensor, steps: int, lr: float,
                   init: Optional[torch.Tensor] = None, low: float = 0.0, high: float = 1.0):
    """投影梯度上升；返回 (最优误报, 最优效用, 真实效用)，均已脱离计算图"""
    profiles = profiles.detach()
    with torch.no_grad():
        truthful = agent_utilities(outcome_fn, profiles, profiles)
    current = (profiles if init is None else init.detach()).clone()
    best, best_u = profiles.clone(), truthful.clone()

    for step in range(steps + 1):
        current.requires_grad_(True)
        u = agent_utilities(outcome_fn, profiles, current)
        with torch.no_grad():
            improved = u > best_u
            best_u = torch.where(improved, u, best_u)
            best = torch.where(improved.unsqueeze(-1), current, best)
        if step == steps:
            break
        grad, = torch.autograd.grad(u.sum(), current)
        with torch.no_grad():
            current = torch.clamp(current + lr * grad, low, high)
    return best.detach(), best_u.detach(), truthful.detach()


def search_misreports(net: AuctionNet, profiles: np.ndarray, steps: int, lr: float = 0.02,
                      chunk_size: int = 256) -> MisreportResult:
    """对一组估值求所有买家的误报（分块以限制内存）"""
    profiles = np.asarray(profiles, dtype=np.float64)
    if profiles.ndim == 2:
        profiles = profiles[None]
    check_bids_shape(net.config, profiles)
    params, activations = net_params(net), net_activations(net)
    fn = lambda bids: outcome_tensors(net.config, params, activations, bids, net.clip_payments)
    parts = []
    for start in range(0, profiles.shape[0], chunk_size):
        chunk = as_bids_tensor(profiles[start:start + chunk_size])
        parts.append(pgd_misreports(fn, chunk, steps, lr))
    return MisreportResult(
        misreports=torch.cat([p[0] for p in parts]).numpy(),
        utilities=torch.cat([p[1] for p in parts]).numpy(),
        truthful_utilities=torch.cat([p[2] for p in parts]).numpy(),
    )


def _check_agent(net: AuctionNet, agent: int):
    if not 0 <= agent < net.config.n_agents:
        raise ShapeMismatchError("agent", f"[0, {net.config.n_agents})", agent)


def misreport_search(net: AuctionNet, profile: np.ndarray, agent: int,
                     steps: int, lr: float = 0.02) -> np.ndarray:
    """买家 agent 的最优误报行（从真实出价出发；steps=0 时返回真实出价）"""
    _check_agent(net, agent)
    result = search_misreports(net, profile, steps, lr)
    return result.misreports[0, agent]


def regret_hat(net: AuctionNet, profile: np.ndarray, agent: int,
               steps: int, lr: float = 0.02) -> float:
    """经验遗憾: 误报效用 − 真实效用，下限为0"""
    _check_agent(net, agent)
    result = search_misreports(net, profile, steps, lr)
    return float(result.regrets[0, agent])

"""
区间界传播(IBP)与ReLU稳定性正则项

NeuronBounds 记录每层的预激活区间：主干各层、分配头得分、支付头预激活。
IBP 在 torch 中计算，因此稳定性正则项可对网络参数求导。
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from auction.models.auction_net import Activation, AuctionNet, DTYPE, net_params


@dataclass
class NeuronBounds:
    """逐层预激活上下界；input_* 为展平的输入盒"""
    input_lower: np.ndarray
    input_upper: np.ndarray
    lower: List[np.ndarray]
    upper: List[np.ndarray]
    fallback: List[np.ndarray] = field(default_factory=list)
    method: str = "ibp"

    def __post_init__(self):
        if not self.fallback:
            self.fallback = [np.zeros(l.shape, dtype=bool) for l in self.lower]

    @property
    def n_layers(self) -> int:
        return len(self.lower)

    def layer(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.lower[index], self.upper[index]

    def widths(self) -> List[np.ndarray]:
        return [u - l for l, u in zip(self.lower, self.upper)]

    def trunk(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """主干ReLU层的区间（不含两个输出头）"""
        return list(zip(self.lower[:-2], self.upper[:-2]))


def interval_affine(weights, biases, lower, upper):
    """仿射层的区间算术: W⁺l + W⁻u + b ≤ Wx + b ≤ W⁺u + W⁻l + b（numpy或torch）"""
    if isinstance(weights, torch.Tensor):
        w_pos, w_neg = torch.clamp(weights, min=0.0), torch.clamp(weights, max=0.0)
    else:
        w_pos, w_neg = np.maximum(weights, 0.0), np.minimum(weights, 0.0)
    lo = lower @ w_pos.T + upper @ w_neg.T + biases
    hi = upper @ w_pos.T + lower @ w_neg.T + biases
    return lo, hi


def ibp_tensors(params: Sequence[Tuple[torch.Tensor, torch.Tensor]],
                activations: Sequence[Activation],
                lower: torch.Tensor, upper: torch.Tensor) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    """沿主干传播区间，两个输出头都以最后一层主干输出为输入"""
    bounds = []
    for (w, b), act in zip(params[:-2], activations[:-2]):
        pre_l, pre_u = interval_affine(w, b, lower, upper)
        bounds.append((pre_l, pre_u))
        lower, upper = torch.relu(pre_l), torch.relu(pre_u)
    for w, b in params[-2:]:
        bounds.append(interval_affine(w, b, lower, upper))
    return bounds


def _box(net: AuctionNet, input_box) -> Tuple[np.ndarray, np.ndarray]:
    if input_box is None:
        size = net.config.n_agents * net.config.n_items
        return np.zeros(size), np.ones(size)
    lo, hi = input_box
    return np.asarray(lo, dtype=np.float64).reshape(-1), np.asarray(hi, dtype=np.float64).reshape(-1)


def ibp_bounds(net: AuctionNet, input_box: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> NeuronBounds:
    """对输入盒（默认 [0,1]^{n×k}）计算每个神经元的预激活区间"""
    lo, hi = _box(net, input_box)
    with torch.no_grad():
        bounds = ibp_tensors(net_params(net), [l.activation for l in net.layers],
                             torch.from_numpy(lo.copy()), torch.from_numpy(hi.copy()))
    return NeuronBounds(
        input_lower=lo,
        input_upper=hi,
        lower=[b[0].numpy() for b in bounds],
        upper=[b[1].numpy() for b in bounds],
    )


def stability_term(bounds: Sequence[Tuple[torch.Tensor, torch.Tensor]]) -> torch.Tensor:
    """Σ −tanh(1 + l·u)，仅对主干ReLU神经元"""
    total = torch.zeros((), dtype=DTYPE)
    for lower, upper in bounds:
        total = total - torch.tanh(1.0 + lower * upper).sum()
    return total


def stability_penalty(bounds: NeuronBounds) -> float:
    pairs = [(torch.from_numpy(np.asarray(l, dtype=np.float64)), torch.from_numpy(np.asarray(u, dtype=np.float64)))
             for l, u in bounds.trunk()]
    return float(stability_term(pairs))


def module_stability_penalty(module) -> torch.Tensor:
    """可训练模块在 [0,1]^{n×k} 上的可微稳定性正则项"""
    cfg = module.config
    size = cfg.n_agents * cfg.n_items
    bounds = ibp_tensors(module.parameter_pairs(), module.activations,
                         torch.zeros(size, dtype=DTYPE), torch.ones(size, dtype=DTYPE))
    return stability_term(bounds[:-2])


def count_unstable(bounds: NeuronBounds, threshold: float = 1e-9) -> int:
    """主干中预激活区间跨越0的ReLU数量"""
    return int(sum(np.sum((l < threshold) & (u > -threshold)) for l, u in bounds.trunk()))

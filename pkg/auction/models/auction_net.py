"""
可认证拍卖网络 - 精确前向计算与解析梯度

网络结构：共享ReLU主干 + 分配头（每个物品一列，sparsemax投影到单纯形，
可选虚拟买家行表示"不分配"）+ 支付头（分数支付或直接支付）。
所有计算使用float64；冻结后的 AuctionNet 不可变，可在多线程中并发求值。
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from auction.config.unified_config import AuctionConfig, HeadStyle, IRMode
from auction.exceptions import ShapeMismatchError, InvalidConfigurationError

ArrayLike = Union[np.ndarray, Sequence[float], float]

DTYPE = torch.float64


class Activation(str, Enum):
    """层激活函数标签（模型文件中的取值）"""
    RELU = "relu"
    IDENTITY = "identity"
    SPARSEMAX = "sparsemax"
    HARD_SIGMOID = "hard_sigmoid"
    SOFTMAX = "softmax"
    SIGMOID = "sigmoid"


# 线性可精确编码的激活函数
ENCODABLE_ACTIVATIONS = {Activation.RELU, Activation.IDENTITY, Activation.SPARSEMAX, Activation.HARD_SIGMOID}


# ============ 激活函数 ============

def _sparsemax_threshold(v: torch.Tensor) -> torch.Tensor:
    """沿最后一维计算sparsemax阈值tau（保留维度）"""
    d = v.shape[-1]
    v_sorted, _ = torch.sort(v, dim=-1, descending=True)
    ks = torch.arange(1, d + 1, dtype=v.dtype, device=v.device)
    cssv = v_sorted.cumsum(dim=-1) - 1.0
    cond = (v_sorted - cssv / ks) > 0
    # cond 为前缀真，取最后一个真的位置
    rho = (cond.to(v.dtype) * ks).argmax(dim=-1, keepdim=True)
    return cssv.gather(-1, rho) / (rho + 1).to(v.dtype)


class SparsemaxFunction(torch.autograd.Function):
    """sparsemax 前向（排序阈值闭式解）与反向（支撑集上的投影雅可比）"""

    @staticmethod
    def forward(ctx, x: torch.Tensor, dim: int) -> torch.Tensor:
        v = x.movedim(dim, -1)
        tau = _sparsemax_threshold(v)
        out = torch.clamp(v - tau, min=0.0)
        # 支撑集边界上的并列坐标计入支撑集
        ctx.save_for_backward(v >= tau)
        ctx.dim = dim
        return out.movedim(-1, dim)

    @staticmethod
    def backward(ctx, grad: torch.Tensor):
        support, = ctx.saved_tensors
        g = grad.movedim(ctx.dim, -1)
        s = support.to(g.dtype)
        mean = (g * s).sum(dim=-1, keepdim=True) / s.sum(dim=-1, keepdim=True)
        return (s * (g - mean)).movedim(-1, ctx.dim), None


def sparsemax_tensor(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return SparsemaxFunction.apply(x, dim)


def hard_sigmoid_tensor(x: torch.Tensor) -> torch.Tensor:
    return torch.clamp(0.25 * x + 0.5, 0.0, 1.0)


def sparsemax(x: ArrayLike) -> np.ndarray:
    """单纯形上的欧氏投影 argmin_z ½‖x−z‖²"""
    v = torch.as_tensor(np.asarray(x, dtype=np.float64))
    return sparsemax_tensor(v, dim=-1).numpy()


def sparsemax_support(x: ArrayLike) -> np.ndarray:
    """支撑集掩码（并列坐标计入）"""
    v = torch.as_tensor(np.asarray(x, dtype=np.float64))
    return (v >= _sparsemax_threshold(v)).numpy()


def sparsemax_threshold(x: ArrayLike) -> float:
    v = torch.as_tensor(np.asarray(x, dtype=np.float64))
    return float(_sparsemax_threshold(v).reshape(-1)[0])


def sparsemax_jacobian(x: ArrayLike) -> np.ndarray:
    """sparsemax 在 x 处的雅可比: 支撑集S上为 I − 11ᵀ/|S|，其余为零"""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    support = np.flatnonzero(sparsemax_support(x))
    jac = np.zeros((x.size, x.size))
    jac[np.ix_(support, support)] = np.eye(support.size) - 1.0 / support.size
    return jac


def hard_sigmoid(x: ArrayLike) -> Union[float, np.ndarray]:
    """分段线性sigmoid: clamp(0.25·x + 0.5, 0, 1)，断点 x = ±2"""
    out = np.clip(0.25 * np.asarray(x, dtype=np.float64) + 0.5, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


# ============ 数据类型 ============

@dataclass(frozen=True)
class DenseLayer:
    """仿射层 x̂ = W x + b 及其激活函数"""
    name: str
    weights: np.ndarray
    biases: np.ndarray
    activation: Activation

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        biases = np.array(self.biases, dtype=np.float64).reshape(-1)
        if weights.ndim != 2 or weights.shape[0] != biases.size:
            raise ShapeMismatchError(f"layer {self.name}", f"({biases.size}, in)", weights.shape)
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(biases))):
            raise InvalidConfigurationError(f"layer {self.name}", "non-finite", "weights must be finite")
        weights.setflags(write=False)
        biases.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class AuctionNet:
    """冻结的拍卖网络：配置 + 层参数 + 导出标志"""
    config: AuctionConfig
    trunk: Tuple[DenseLayer, ...]
    allocation_head: DenseLayer
    payment_head: DenseLayer
    clip_payments: bool = False
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "trunk", tuple(self.trunk))
        self._validate()

    @property
    def layers(self) -> Tuple[DenseLayer, ...]:
        return self.trunk + (self.allocation_head, self.payment_head)

    def _validate(self):
        cfg = self.config
        prev = cfg.n_agents * cfg.n_items
        if len(self.trunk) != len(cfg.trunk_widths):
            raise ShapeMismatchError("trunk depth", len(cfg.trunk_widths), len(self.trunk))
        for layer, width in zip(self.trunk, cfg.trunk_widths):
            if layer.in_dim != prev or layer.out_dim != width:
                raise ShapeMismatchError(f"layer {layer.name}", (width, prev), layer.weights.shape)
            if layer.activation is not Activation.RELU:
                raise InvalidConfigurationError(layer.name, layer.activation.value, "trunk layers use ReLU")
            prev = width
        expected = {
            self.allocation_head.name: (cfg.n_rows * cfg.n_items, prev),
            self.payment_head.name: (cfg.n_agents, prev),
        }
        for layer in (self.allocation_head, self.payment_head):
            if layer.weights.shape != expected[layer.name]:
                raise ShapeMismatchError(f"layer {layer.name}", expected[layer.name], layer.weights.shape)
        alloc_act, pay_act = head_activations(cfg)
        if self.allocation_head.activation is not alloc_act or self.payment_head.activation is not pay_act:
            raise InvalidConfigurationError("heads", (self.allocation_head.activation.value,
                                                      self.payment_head.activation.value),
                                            f"expected ({alloc_act.value}, {pay_act.value})")
        if self.clip_payments and cfg.ir_mode is not IRMode.PENALTY_FREE:
            raise InvalidConfigurationError("clip_payments", True, "only penalty_free payments are clipped")


@dataclass
class Outcome:
    """拍卖结果：分配矩阵、（分数）支付与效用"""
    allocation: np.ndarray
    full_allocation: np.ndarray
    frac_payment: Optional[np.ndarray]
    payment: np.ndarray
    utility: np.ndarray

    @property
    def revenue(self) -> Union[float, np.ndarray]:
        total = self.payment.sum(axis=-1)
        return float(total) if np.ndim(total) == 0 else total


@dataclass
class OutcomeTensors:
    """可微分的拍卖结果（训练与梯度计算使用）"""
    allocation: torch.Tensor
    full_allocation: torch.Tensor
    frac_payment: Optional[torch.Tensor]
    payment: torch.Tensor
    utility: torch.Tensor
    value: torch.Tensor

    def to_outcome(self) -> Outcome:
        detach = lambda t: None if t is None else t.detach().cpu().numpy()
        return Outcome(
            allocation=detach(self.allocation),
            full_allocation=detach(self.full_allocation),
            frac_payment=detach(self.frac_payment),
            payment=detach(self.payment),
            utility=detach(self.utility),
        )


@dataclass
class OutcomeAdjoints:
    """反向传播的上游梯度（缺省为零）"""
    allocation: Optional[ArrayLike] = None
    payment: Optional[ArrayLike] = None
    utility: Optional[ArrayLike] = None
    frac_payment: Optional[ArrayLike] = None


@dataclass
class NetGradients:
    """参数梯度（每层 dW, db）与输入梯度"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    bids: np.ndarray


# ============ 前向计算 ============

def head_activations(config: AuctionConfig) -> Tuple[Activation, Activation]:
    if config.head_style is HeadStyle.REGRETNET:
        return Activation.SOFTMAX, Activation.SIGMOID
    if config.ir_mode is IRMode.FRACTIONAL:
        return Activation.SPARSEMAX, Activation.HARD_SIGMOID
    return Activation.SPARSEMAX, Activation.IDENTITY


def _apply(activation: Activation, x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    if activation is Activation.RELU:
        return torch.relu(x)
    if activation is Activation.IDENTITY:
        return x
    if activation is Activation.SPARSEMAX:
        return sparsemax_tensor(x, dim=dim)
    if activation is Activation.HARD_SIGMOID:
        return hard_sigmoid_tensor(x)
    if activation is Activation.SOFTMAX:
        return torch.softmax(x, dim=dim)
    return torch.sigmoid(x)


def check_bids_shape(config: AuctionConfig, bids) -> None:
    expected = (config.n_agents, config.n_items)
    if tuple(bids.shape[-2:]) != expected:
        raise ShapeMismatchError("bids", expected, tuple(bids.shape))


def outcome_tensors(config: AuctionConfig,
                    params: Sequence[Tuple[torch.Tensor, torch.Tensor]],
                    activations: Sequence[Activation],
                    bids: torch.Tensor,
                    clip_payments: bool = False) -> OutcomeTensors:
    """拍卖网络的可微前向计算；params 依次为主干各层、分配头、支付头"""
    check_bids_shape(config, bids)
    n, k = config.n_agents, config.n_items
    batch_shape = bids.shape[:-2]
    x = bids.reshape(*batch_shape, n * k)
    for (w, b), act in zip(params[:-2], activations[:-2]):
        x = _apply(act, x @ w.T + b)

    (wa, ba), (wp, bp) = params[-2], params[-1]
    scores = (x @ wa.T + ba).reshape(*batch_shape, config.n_rows, k)
    full_allocation = _apply(activations[-2], scores, dim=-2)
    allocation = full_allocation[..., :n, :]

    pay_pre = x @ wp.T + bp
    value = (allocation * bids).sum(dim=-1)
    if config.ir_mode is IRMode.FRACTIONAL:
        frac = _apply(activations[-1], pay_pre)
        payment = frac * value
    else:
        frac = None
        payment = pay_pre
        if clip_payments:
            payment = torch.minimum(torch.clamp(pay_pre, min=0.0), value)
    return OutcomeTensors(
        allocation=allocation,
        full_allocation=full_allocation,
        frac_payment=frac,
        payment=payment,
        utility=value - payment,
        value=value,
    )


def net_params(net: AuctionNet, requires_grad: bool = False) -> List[Tuple[torch.Tensor, torch.Tensor]]:
    params = []
    for layer in net.layers:
        w = torch.tensor(layer.weights, dtype=DTYPE, requires_grad=requires_grad)
        b = torch.tensor(layer.biases, dtype=DTYPE, requires_grad=requires_grad)
        params.append((w, b))
    return params


def net_activations(net: AuctionNet) -> List[Activation]:
    return [layer.activation for layer in net.layers]


def as_bids_tensor(bids, requires_grad: bool = False) -> torch.Tensor:
    if isinstance(bids, torch.Tensor):
        tensor = bids.to(DTYPE)
        if requires_grad and not tensor.requires_grad:
            tensor = tensor.detach().clone().requires_grad_(True)
        return tensor
    return torch.tensor(np.asarray(bids, dtype=np.float64), dtype=DTYPE, requires_grad=requires_grad)


def forward_tensors(net: AuctionNet, bids: torch.Tensor) -> OutcomeTensors:
    """冻结网络的可微前向（对输入可求导，参数为常量）"""
    return outcome_tensors(net.config, net_params(net), net_activations(net), bids, net.clip_payments)


def forward(net: AuctionNet, bids: ArrayLike) -> Outcome:
    """计算给定出价（n×k 或 批量 B×n×k）下的拍卖结果"""
    with torch.no_grad():
        return forward_tensors(net, as_bids_tensor(bids)).to_outcome()


def utility(outcome: Outcome, valuation: ArrayLike, agent: int) -> Union[float, np.ndarray]:
    """加性效用 Σ_j a_ij·v_ij − p_i；估值可与产生结果的出价不同"""
    valuation = np.asarray(valuation, dtype=np.float64)
    n = outcome.payment.shape[-1]
    if not 0 <= agent < n:
        raise ShapeMismatchError("agent", f"[0, {n})", agent)
    value = np.sum(outcome.allocation[..., agent, :] * valuation[..., agent, :], axis=-1)
    result = value - outcome.payment[..., agent]
    return float(result) if np.ndim(result) == 0 else result


# ============ 梯度 ============

def loss_gradients(net: AuctionNet, bids: ArrayLike,
                   loss_fn: Callable[[OutcomeTensors], torch.Tensor]) -> NetGradients:
    """任意标量损失对参数与出价的精确反向模式梯度"""
    params = net_params(net, requires_grad=True)
    bids_t = torch.tensor(np.asarray(bids, dtype=np.float64), dtype=DTYPE, requires_grad=True)
    out = outcome_tensors(net.config, params, net_activations(net), bids_t, net.clip_payments)
    loss = loss_fn(out)
    leaves = [t for pair in params for t in pair] + [bids_t]
    grads = torch.autograd.grad(loss, leaves, allow_unused=True)
    grads = [torch.zeros_like(leaf) if g is None else g for g, leaf in zip(grads, leaves)]
    return NetGradients(
        weights=[g.numpy() for g in grads[0:-1:2]],
        biases=[g.numpy() for g in grads[1:-1:2]],
        bids=grads[-1].numpy(),
    )


def gradients(net: AuctionNet, bids: ArrayLike, adjoints: OutcomeAdjoints) -> NetGradients:
    """向量-雅可比积: 以 adjoints 为上游梯度反传到参数与出价"""

    def contraction(out: OutcomeTensors) -> torch.Tensor:
        total = out.payment.sum() * 0.0
        for name in ("allocation", "payment", "utility", "frac_payment"):
            adj = getattr(adjoints, name)
            if adj is None:
                continue
            tensor = getattr(out, name)
            if tensor is None:
                raise InvalidConfigurationError("adjoints", name, "not produced in this ir_mode")
            total = total + (tensor * torch.as_tensor(np.asarray(adj, dtype=np.float64))).sum()
        return total

    return loss_gradients(net, bids, contraction)


# ============ 可训练模块 ============

class AuctionModule(nn.Module):
    """持有可训练参数的拍卖网络；freeze() 导出不可变的 AuctionNet"""

    def __init__(self, config: AuctionConfig, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.config = config
        n, k = config.n_agents, config.n_items
        dims = [n * k] + list(config.trunk_widths)
        self.trunk = nn.ModuleList(
            nn.Linear(d_in, d_out, dtype=DTYPE) for d_in, d_out in zip(dims[:-1], dims[1:])
        )
        self.allocation_head = nn.Linear(dims[-1], config.n_rows * k, dtype=DTYPE)
        self.payment_head = nn.Linear(dims[-1], n, dtype=DTYPE)
        self.activations = [Activation.RELU] * len(self.trunk) + list(head_activations(config))
        self.reset_parameters(generator)

    def linears(self) -> List[nn.Linear]:
        return list(self.trunk) + [self.allocation_head, self.payment_head]

    def reset_parameters(self, generator: Optional[torch.Generator] = None):
        """权重 U(±√(6/(fan_in+fan_out)))，偏置为零"""
        with torch.no_grad():
            for layer in self.linears():
                bound = math.sqrt(6.0 / (layer.in_features + layer.out_features))
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.zero_()

    def parameter_pairs(self) -> List[Tuple[torch.Tensor, torch.Tensor]]:
        return [(layer.weight, layer.bias) for layer in self.linears()]

    def forward(self, bids: torch.Tensor) -> OutcomeTensors:
        return outcome_tensors(self.config, self.parameter_pairs(), self.activations, bids)

    def freeze(self, clip_payments: bool = False, provenance: Optional[Dict[str, Any]] = None) -> AuctionNet:
        names = [f"trunk_{i}" for i in range(len(self.trunk))] + ["allocation", "payment"]
        layers = [
            DenseLayer(name, layer.weight.detach().cpu().numpy().copy(),
                       layer.bias.detach().cpu().numpy().copy(), act)
            for name, layer, act in zip(names, self.linears(), self.activations)
        ]
        return AuctionNet(self.config, tuple(layers[:-2]), layers[-2], layers[-1],
                          clip_payments=clip_payments, provenance=dict(provenance or {}))

    @classmethod
    def from_net(cls, net: AuctionNet) -> "AuctionModule":
        module = cls(net.config)
        with torch.no_grad():
            for linear, layer in zip(module.linears(), net.layers):
                linear.weight.copy_(torch.from_numpy(np.array(layer.weights)))
                linear.bias.copy_(torch.from_numpy(np.array(layer.biases)))
        return module


def init_net(config: AuctionConfig, seed: int) -> AuctionNet:
    """按种子随机初始化并冻结"""
    generator = torch.Generator().manual_seed(seed)
    return AuctionModule(config, generator).freeze(provenance={"seed": seed, "init": "xavier_uniform"})


def zero_net(config: AuctionConfig) -> AuctionNet:
    """全零权重网络（常数机制）"""
    module = AuctionModule(config)
    with torch.no_grad():
        for layer in module.linears():
            layer.weight.zero_()
    return module.freeze(provenance={"init": "zeros"})

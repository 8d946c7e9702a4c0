"""
混合整数编码 - 将拍卖网络在"仅放开一个买家出价行"的输入盒上精确编码

- ReLU: big-M（x ≥ x̂, x ≤ x̂ − l(1−δ), x ≤ uδ, x ≥ 0），稳定神经元省略二元变量
- sparsemax: 每个物品列写出KKT条件（平稳性、可行性）+ 互补对 μ₁(1−z)=0, μ₂z=0
- hard_sigmoid: clamp(h,0,1) = relu(h) − relu(h−1)，两次ReLU编码
- 分数支付: w_j = a_j·b_j, y = Σw, p = p̃·y 为双线性项；裁剪支付: p = q − relu(q − y), q = relu(p̂)
- 目标: u_i = Σ_j a_ij v_ij − p_i（v 为真实估值）
"""

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from auction.config.unified_config import CertifyConfig, IRMode
from auction.models.auction_net import ENCODABLE_ACTIVATIONS, AuctionNet
from auction.training.ibp import NeuronBounds
from auction.verification.lp import LinearProgram, Relation, Sense
from auction.exceptions import NotEncodableError, ShapeMismatchError, UnboundedNeuronError

_INDEXED_NAME = re.compile(r"^(.*)\[(\d+)\]$")


@dataclass
class MipModel:
    """MIP模型：线性部分 + 二元变量 + 互补对 + 双线性三元组"""
    lp: LinearProgram
    binaries: np.ndarray
    complementarity: List[Tuple[int, int]]
    bilinear: List[Tuple[int, int, int]]
    bid_vars: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    allocation_vars: Optional[np.ndarray] = None
    payment_var: Optional[int] = None
    agent: int = 0
    stats: Dict[str, int] = field(default_factory=dict)

    @property
    def names(self) -> List[str]:
        return self.lp.names or []

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.lp.objective @ x)


class MipBuilder:
    """逐个添加变量与约束的MIP构造器"""

    def __init__(self, stable_threshold: float = 1e-9, elide_stable: bool = True,
                 complementarity: str = "binary"):
        self.stable_threshold = stable_threshold
        self.elide_stable = elide_stable
        self.complementarity_mode = complementarity
        self.names: List[str] = []
        self.lower: List[float] = []
        self.upper: List[float] = []
        self.binaries: List[int] = []
        self.rows: List[Tuple[Dict[int, float], Relation, float]] = []
        self.pairs: List[Tuple[int, int]] = []
        self.triples: List[Tuple[int, int, int]] = []
        self.stats = {"relu_stable": 0, "relu_unstable": 0, "complementarity": 0, "bilinear": 0}

    # ---------- 基本操作 ----------

    def add_var(self, name: str, lower: float, upper: float, binary: bool = False) -> int:
        if not (np.isfinite(lower) and np.isfinite(upper)):
            match = _INDEXED_NAME.match(name)
            layer, neuron = (match.group(1), int(match.group(2))) if match else (name, -1)
            raise UnboundedNeuronError(layer, neuron, lower, upper)
        index = len(self.names)
        self.names.append(name)
        self.lower.append(float(lower))
        self.upper.append(float(max(upper, lower)))
        if binary:
            self.binaries.append(index)
        return index

    def add_row(self, coeffs: Dict[int, float], relation: Relation, rhs: float):
        self.rows.append((dict(coeffs), Relation(relation), float(rhs)))

    def add_affine(self, name: str, inputs: np.ndarray, weights: np.ndarray, bias: float,
                   lower: float, upper: float) -> int:
        """x̂ = Σ w·x + b，x̂ 的界来自神经元界"""
        v = self.add_var(name, lower, upper)
        coeffs = {v: 1.0}
        for p, w in zip(inputs, weights):
            if w != 0.0:
                coeffs[int(p)] = coeffs.get(int(p), 0.0) - float(w)
        self.add_row(coeffs, Relation.EQ, bias)
        return v

    # ---------- 分段线性单元 ----------

    def add_relu(self, pre: int, lower: float, upper: float, name: str) -> int:
        """x = max(x̂, 0)；稳定神经元（可选）不引入二元变量"""
        thr = self.stable_threshold
        stable_active, stable_inactive = lower >= thr, upper <= -thr
        if self.elide_stable and stable_active:
            self.stats["relu_stable"] += 1
            return pre
        if self.elide_stable and stable_inactive:
            self.stats["relu_stable"] += 1
            return self.add_var(name, 0.0, 0.0)
        if stable_active or stable_inactive:
            self.stats["relu_stable"] += 1
        else:
            self.stats["relu_unstable"] += 1

        x = self.add_var(name, 0.0, max(upper, 0.0))
        delta = self.add_var(f"{name}.delta", 0.0, 1.0, binary=True)
        self.add_row({x: 1.0, pre: -1.0}, Relation.GE, 0.0)
        self.add_row({x: 1.0, pre: -1.0, delta: -lower}, Relation.LE, -lower)
        self.add_row({x: 1.0, delta: -upper}, Relation.LE, 0.0)
        return x

    def add_complementarity(self, x: int, y: int, name: str):
        """x·y = 0（x, y ≥ 0 且有界）"""
        ux, uy = self.upper[x], self.upper[y]
        if ux <= 0.0 or uy <= 0.0:
            return
        self.stats["complementarity"] += 1
        if self.complementarity_mode == "branch":
            self.pairs.append((x, y))
            return
        sigma = self.add_var(f"{name}.sigma", 0.0, 1.0, binary=True)
        self.add_row({x: 1.0, sigma: -ux}, Relation.LE, 0.0)
        self.add_row({y: 1.0, sigma: uy}, Relation.LE, uy)

    def add_bilinear(self, x: int, y: int, name: str) -> int:
        """w = x·y，w 的界取四个角点乘积"""
        corners = [self.lower[x] * self.lower[y], self.lower[x] * self.upper[y],
                   self.upper[x] * self.lower[y], self.upper[x] * self.upper[y]]
        w = self.add_var(name, min(corners), max(corners))
        self.triples.append((w, x, y))
        self.stats["bilinear"] += 1
        return w

    def add_sparsemax_column(self, scores: List[int], lowers: np.ndarray, uppers: np.ndarray,
                             name: str) -> List[int]:
        """一列sparsemax的KKT编码，返回输出 z 的变量下标"""
        rows = len(scores)
        max_l, max_u = float(np.max(lowers)), float(np.max(uppers))
        lam = self.add_var(f"{name}.lambda", max_l - 1.0, max_u)
        outputs = []
        for r, s in enumerate(scores):
            z = self.add_var(f"{name}.z[{r}]", 0.0, 1.0)
            mu2 = self.add_var(f"{name}.mu2[{r}]", 0.0, max(0.0, max_u - float(lowers[r])))
            others = [float(lowers[q]) for q in range(rows) if q != r]
            m1 = max(0.0, float(uppers[r]) - 1.0 - (max(others) if others else -np.inf))
            if not np.isfinite(m1):
                m1 = max(0.0, float(uppers[r]) - 1.0 - (max_l - 1.0))
            coeffs = {z: 1.0, s: -1.0, lam: 1.0, mu2: -1.0}
            if m1 > 0.0:
                mu1 = self.add_var(f"{name}.mu1[{r}]", 0.0, m1)
                gap = self.add_var(f"{name}.slack[{r}]", 0.0, 1.0)
                self.add_row({gap: 1.0, z: 1.0}, Relation.EQ, 1.0)
                coeffs[mu1] = 1.0
                self.add_complementarity(mu1, gap, f"{name}.c1[{r}]")
            self.add_row(coeffs, Relation.EQ, 0.0)
            self.add_complementarity(mu2, z, f"{name}.c2[{r}]")
            outputs.append(z)
        self.add_row({z: 1.0 for z in outputs}, Relation.EQ, 1.0)
        return outputs

    def add_hard_sigmoid(self, pre: int, lower: float, upper: float, name: str) -> int:
        """p̃ = clamp(0.25x̂ + 0.5, 0, 1) = relu(h) − relu(h − 1)"""
        hl, hu = 0.25 * lower + 0.5, 0.25 * upper + 0.5
        h1 = self.add_var(f"{name}.h", hl, hu)
        self.add_row({h1: 1.0, pre: -0.25}, Relation.EQ, 0.5)
        q1 = self.add_relu(h1, hl, hu, f"{name}.relu_lo")
        h2 = self.add_var(f"{name}.h_minus_1", hl - 1.0, hu - 1.0)
        self.add_row({h2: 1.0, h1: -1.0}, Relation.EQ, -1.0)
        q2 = self.add_relu(h2, hl - 1.0, hu - 1.0, f"{name}.relu_hi")
        out = self.add_var(name, max(0.0, min(hl, 1.0)), min(1.0, max(hu, 0.0)))
        self.add_row({out: 1.0, q1: -1.0, q2: 1.0}, Relation.EQ, 0.0)
        return out

    def build(self, objective: Dict[int, float], **metadata) -> MipModel:
        n = len(self.names)
        c = np.zeros(n)
        for j, v in objective.items():
            c[j] += v
        matrix = np.zeros((len(self.rows), n))
        for i, (coeffs, _, _) in enumerate(self.rows):
            for j, v in coeffs.items():
                matrix[i, j] += v
        lp = LinearProgram(
            objective=c,
            matrix=matrix,
            relations=[r[1] for r in self.rows],
            rhs=np.array([r[2] for r in self.rows]),
            lower=np.array(self.lower),
            upper=np.array(self.upper),
            sense=Sense.MAX,
            names=list(self.names),
        )
        return MipModel(
            lp=lp,
            binaries=np.asarray(self.binaries, dtype=np.int64),
            complementarity=list(self.pairs),
            bilinear=list(self.triples),
            stats=dict(self.stats, variables=n, constraints=len(self.rows), binaries=len(self.binaries)),
            **metadata,
        )


def check_encodable(net: AuctionNet):
    for layer in net.layers:
        if layer.activation not in ENCODABLE_ACTIVATIONS:
            raise NotEncodableError(layer.activation.value, layer.name)


def encode(net: AuctionNet, profile: np.ndarray, agent: int, bounds: NeuronBounds,
           config: Optional[CertifyConfig] = None) -> MipModel:
    """以 bounds 所对应的输入盒编码买家 agent 的效用最大化问题"""
    config = config or CertifyConfig()
    check_encodable(net)
    cfg = net.config
    n, k = cfg.n_agents, cfg.n_items
    profile = np.asarray(profile, dtype=np.float64)
    if profile.shape != (n, k):
        raise ShapeMismatchError("profile", (n, k), profile.shape)
    if not 0 <= agent < n:
        raise ShapeMismatchError("agent", f"[0, {n})", agent)
    if bounds.n_layers != len(net.layers):
        raise ShapeMismatchError("neuron bounds", len(net.layers), bounds.n_layers)

    builder = MipBuilder(config.stable_threshold, config.elide_stable, config.complementarity)

    # 输入：出价矩阵按行展平
    inputs = np.array([
        builder.add_var(f"bid[{i},{j}]", bounds.input_lower[i * k + j], bounds.input_upper[i * k + j])
        for i in range(n) for j in range(k)
    ], dtype=np.int64)
    bid_vars = inputs[agent * k:(agent + 1) * k]

    current = inputs
    for index, layer in enumerate(net.trunk):
        lo, hi = bounds.layer(index)
        outputs = []
        for j in range(layer.out_dim):
            pre = builder.add_affine(f"{layer.name}.pre[{j}]", current, layer.weights[j], layer.biases[j],
                                     lo[j], hi[j])
            outputs.append(builder.add_relu(pre, lo[j], hi[j], f"{layer.name}.post[{j}]"))
        current = np.asarray(outputs, dtype=np.int64)

    # 分配头：R×k 个得分，逐列 sparsemax
    head = net.allocation_head
    a_lo, a_hi = bounds.layer(len(net.trunk))
    scores = [builder.add_affine(f"score[{s // k},{s % k}]", current, head.weights[s], head.biases[s],
                                 a_lo[s], a_hi[s]) for s in range(head.out_dim)]
    rows = cfg.n_rows
    allocation = np.zeros((rows, k), dtype=np.int64)
    for j in range(k):
        column = [scores[r * k + j] for r in range(rows)]
        idx = [r * k + j for r in range(rows)]
        allocation[:, j] = builder.add_sparsemax_column(column, a_lo[idx], a_hi[idx], f"sparsemax[{j}]")

    # 支付头：只需要被认证买家的支付
    pay = net.payment_head
    p_lo, p_hi = bounds.layer(len(net.trunk) + 1)
    p_pre = builder.add_affine(f"payment.pre[{agent}]", current, pay.weights[agent], pay.biases[agent],
                               p_lo[agent], p_hi[agent])

    def allocated_value() -> int:
        products = [builder.add_bilinear(int(allocation[agent, j]), int(bid_vars[j]), f"value.w[{j}]")
                    for j in range(k)]
        y_hi = sum(builder.upper[w] for w in products)
        y = builder.add_var("value.y", 0.0, y_hi)
        builder.add_row({y: 1.0, **{w: -1.0 for w in products}}, Relation.EQ, 0.0)
        return y

    if cfg.ir_mode is IRMode.FRACTIONAL:
        frac = builder.add_hard_sigmoid(p_pre, p_lo[agent], p_hi[agent], "payment.frac")
        payment = builder.add_bilinear(frac, allocated_value(), "payment")
    elif net.clip_payments:
        q = builder.add_relu(p_pre, p_lo[agent], p_hi[agent], "payment.nonneg")
        y = allocated_value()
        q_lo, q_hi = builder.lower[q], builder.upper[q]
        excess_lo, excess_hi = q_lo - builder.upper[y], q_hi - builder.lower[y]
        excess = builder.add_var("payment.excess", excess_lo, excess_hi)
        builder.add_row({excess: 1.0, q: -1.0, y: 1.0}, Relation.EQ, 0.0)
        cut = builder.add_relu(excess, excess_lo, excess_hi, "payment.excess_relu")
        payment = builder.add_var("payment", min(0.0, q_lo), q_hi)
        builder.add_row({payment: 1.0, q: -1.0, cut: 1.0}, Relation.EQ, 0.0)
    else:
        payment = p_pre

    valuation = profile[agent]
    objective = {int(allocation[agent, j]): float(valuation[j]) for j in range(k)}
    objective[payment] = objective.get(payment, 0.0) - 1.0
    return builder.build(objective, bid_vars=bid_vars, allocation_vars=allocation,
                         payment_var=payment, agent=agent)

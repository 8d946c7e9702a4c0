"""
Planet 式逐层界收紧

第一层直接使用 IBP（单个仿射层上区间算术即精确界）。之后每一层的每个神经元
求两个LP（最小/最大预激活），约束为之前所有层的ReLU三角松弛：
    不稳定:   x ≥ 0,  x ≥ x̂,  x ≤ u(x̂ − l)/(u − l)
    稳定激活: x = x̂
    稳定失活: x = 0
同一层的所有LP共享约束，只换目标函数，因此上一次的最优基作为热启动提示。
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np

from auction.models.auction_net import AuctionNet
from auction.training.ibp import NeuronBounds, count_unstable, ibp_bounds, interval_affine
from auction.verification.lp import LinearProgram, LpStatus, Relation, Sense, solve
from auction.tools.metrics_tool import record_fallback
from auction.exceptions import LpNumericalError

SAFETY_MARGIN = 1e-7
STABLE_THRESHOLD = 1e-9


class _RelaxationBuilder:
    """按层累积三角松弛约束的LP构造器"""

    def __init__(self, input_lower: np.ndarray, input_upper: np.ndarray):
        self.lower = list(input_lower)
        self.upper = list(input_upper)
        self.rows: List[Tuple[Dict[int, float], Relation, float]] = []
        self.layer_vars: List[np.ndarray] = [np.arange(len(self.lower))]

    @property
    def n_vars(self) -> int:
        return len(self.lower)

    def add_relu_layer(self, weights: np.ndarray, biases: np.ndarray,
                       pre_lower: np.ndarray, pre_upper: np.ndarray, threshold: float):
        prev = self.layer_vars[-1]
        out = []
        for j in range(weights.shape[0]):
            l, u = float(pre_lower[j]), float(pre_upper[j])
            v = self.n_vars
            out.append(v)
            affine = {int(p): -float(w) for p, w in zip(prev, weights[j]) if w != 0.0}
            if u <= -threshold:
                self.lower.append(0.0)
                self.upper.append(0.0)
            elif l >= threshold:
                self.lower.append(l)
                self.upper.append(u)
                self.rows.append(({v: 1.0, **affine}, Relation.EQ, float(biases[j])))
            elif u - l < 1e-12:
                self.lower.append(0.0)
                self.upper.append(max(u, 0.0))
            else:
                self.lower.append(0.0)
                self.upper.append(u)
                self.rows.append(({v: 1.0, **affine}, Relation.GE, float(biases[j])))
                alpha = u / (u - l)
                scaled = {p: alpha * c for p, c in affine.items()}
                self.rows.append(({v: 1.0, **scaled}, Relation.LE, alpha * (float(biases[j]) - l)))
        self.layer_vars.append(np.asarray(out, dtype=np.int64))

    def program(self) -> LinearProgram:
        n = self.n_vars
        matrix = np.zeros((len(self.rows), n))
        for i, (coeffs, _, _) in enumerate(self.rows):
            for j, c in coeffs.items():
                matrix[i, j] += c
        return LinearProgram(
            objective=np.zeros(n),
            matrix=matrix,
            relations=[r[1] for r in self.rows],
            rhs=np.array([r[2] for r in self.rows]),
            lower=np.array(self.lower),
            upper=np.array(self.upper),
            sense=Sense.MAX,
        )


def _tighten_layer(lp: LinearProgram, prev_vars: np.ndarray, weights: np.ndarray, biases: np.ndarray,
                   seed_lower: np.ndarray, seed_upper: np.ndarray, layer_name: str):
    """对一层的每个神经元求 min/max；失败时回退到种子区间"""
    lower, upper = seed_lower.copy(), seed_upper.copy()
    fallback = np.zeros(weights.shape[0], dtype=bool)
    hint = None
    for j in range(weights.shape[0]):
        objective = np.zeros(lp.n_vars)
        objective[prev_vars] = weights[j]
        values = []
        try:
            for sense in (Sense.MAX, Sense.MIN):
                sol = solve(lp.with_objective(objective, sense.value), basis_hint=hint)
                if sol.status is not LpStatus.OPTIMAL:
                    raise LpNumericalError(f"bound LP returned {sol.status.value}")
                hint = sol.basis or hint
                values.append(sol.objective + biases[j])
        except LpNumericalError as e:
            fallback[j] = True
            record_fallback("planet_lp")
            logging.warning(f"界收紧LP失败，{layer_name}[{j}] 回退到IBP区间: {e.message}")
            continue
        hi, lo = values
        hi += SAFETY_MARGIN * (1.0 + abs(hi))
        lo -= SAFETY_MARGIN * (1.0 + abs(lo))
        lower[j] = max(lo, seed_lower[j])
        upper[j] = min(hi, seed_upper[j])
        if lower[j] > upper[j]:
            # 数值误差导致的交集为空
            lower[j], upper[j] = seed_lower[j], seed_upper[j]
    return lower, upper, fallback


def planet_bounds(net: AuctionNet, input_box: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                  threshold: float = STABLE_THRESHOLD) -> NeuronBounds:
    """逐层LP界收紧；结果区间包含于IBP区间且保持可靠"""
    seed = ibp_bounds(net, input_box)
    builder = _RelaxationBuilder(seed.input_lower, seed.input_upper)
    lowers, uppers, fallbacks = [seed.lower[0]], [seed.upper[0]], [np.zeros(seed.lower[0].shape, dtype=bool)]

    trunk = net.trunk
    for index in range(1, len(trunk) + 1):
        prev = trunk[index - 1]
        builder.add_relu_layer(prev.weights, prev.biases, lowers[-1], uppers[-1], threshold)
        lp = builder.program()
        prev_vars = builder.layer_vars[-1]
        post_l, post_u = np.maximum(lowers[-1], 0.0), np.maximum(uppers[-1], 0.0)

        targets = [trunk[index]] if index < len(trunk) else [net.allocation_head, net.payment_head]
        for layer in targets:
            # 以收紧后的上一层区间重新做区间算术，作为种子与回退值
            seed_l, seed_u = interval_affine(layer.weights, layer.biases, post_l, post_u)
            lo, hi, flags = _tighten_layer(lp, prev_vars, layer.weights, layer.biases,
                                           seed_l, seed_u, layer.name)
            lowers.append(lo)
            uppers.append(hi)
            fallbacks.append(flags)

    bounds = NeuronBounds(
        input_lower=seed.input_lower,
        input_upper=seed.input_upper,
        lower=lowers,
        upper=uppers,
        fallback=fallbacks,
        method="planet",
    )
    logging.debug(f"Planet界: 不稳定ReLU {count_unstable(bounds, threshold)} 个 "
                  f"(IBP {count_unstable(seed, threshold)} 个)")
    return bounds


def count_unstable_relus(bounds: NeuronBounds, threshold: float = STABLE_THRESHOLD) -> int:
    """区间跨越0的主干ReLU数量"""
    return count_unstable(bounds, threshold)


def compute_bounds(net: AuctionNet, input_box, method: str = "planet",
                   threshold: float = STABLE_THRESHOLD) -> NeuronBounds:
    if method == "ibp":
        return ibp_bounds(net, input_box)
    return planet_bounds(net, input_box, threshold)

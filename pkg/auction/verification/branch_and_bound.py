"""
最佳优先分支定界

节点松弛 = LP：二元变量放松到 [0,1]，互补约束去掉，双线性项用当前节点界上的
McCormick 包络代替。分支顺序：最不整的二元变量 → 违反最大的互补对（x=0 / y=0）
→ 包络违反最大的双线性项（对宽度较大的因子在中点二分）。
"""

import heapq
import itertools
import logging
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np

from auction.verification.lp import LinearProgram, LpBasis, LpSolution, LpStatus, Relation, solve
from auction.verification.mip import MipModel
from auction.tools.metrics_tool import record_bab, record_fallback
from auction.exceptions import LpNumericalError

INTEGRALITY_TOLERANCE = 1e-6
COMPLEMENTARITY_TOLERANCE = 1e-7
BILINEAR_TOLERANCE = 1e-7
MIN_SPLIT_WIDTH = 1e-7

# bid -> (网络效用, 对应出价)；返回值必须是真实可达的效用
IncumbentFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class BabStatus(str, Enum):
    OPTIMAL = "optimal"
    INCOMPLETE = "incomplete"
    INFEASIBLE = "infeasible"


@dataclass
class BabResult:
    upper_bound: float
    incumbent_value: float
    incumbent_bid: Optional[np.ndarray]
    incumbent_x: Optional[np.ndarray]
    status: BabStatus
    nodes: int
    seconds: float
    root_bound: float

    @property
    def gap(self) -> float:
        return self.upper_bound - self.incumbent_value


@dataclass
class _Node:
    lower: np.ndarray
    upper: np.ndarray
    solution: LpSolution
    depth: int


def mccormick_rows(triples: List[Tuple[int, int, int]], lower: np.ndarray, upper: np.ndarray, n_vars: int):
    """w = x·y 在盒 [xl,xu]×[yl,yu] 上的四条McCormick包络约束"""
    rows = np.zeros((4 * len(triples), n_vars))
    relations, rhs = [], []
    for t, (w, x, y) in enumerate(triples):
        xl, xu, yl, yu = lower[x], upper[x], lower[y], upper[y]
        envelope = [
            (yl, xl, Relation.GE, -xl * yl),
            (yu, xu, Relation.GE, -xu * yu),
            (yl, xu, Relation.LE, -xu * yl),
            (yu, xl, Relation.LE, -xl * yu),
        ]
        for e, (cx, cy, relation, b) in enumerate(envelope):
            row = rows[4 * t + e]
            row[w] += 1.0
            row[x] -= cx
            row[y] -= cy
            relations.append(relation)
            rhs.append(b)
    return rows, relations, np.asarray(rhs, dtype=np.float64)


def node_program(model: MipModel, lower: np.ndarray, upper: np.ndarray) -> LinearProgram:
    """节点LP松弛"""
    base = model.lp
    if not model.bilinear:
        return base.with_bounds(lower, upper)
    rows, relations, rhs = mccormick_rows(model.bilinear, lower, upper, base.n_vars)
    return LinearProgram(
        objective=base.objective,
        matrix=np.vstack([base.matrix, rows]),
        relations=list(base.relations) + relations,
        rhs=np.concatenate([base.rhs, rhs]),
        lower=lower,
        upper=upper,
        sense=base.sense,
        names=base.names,
    )


def select_branch(model: MipModel, x: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """返回子节点的 (lower, upper) 列表；None 表示松弛解已是MIP可行解；[] 表示无法继续细分"""
    if model.binaries.size:
        values = x[model.binaries]
        frac = np.abs(values - np.round(values))
        i = int(np.argmax(frac))
        if frac[i] > INTEGRALITY_TOLERANCE:
            j = int(model.binaries[i])
            down_u, up_l = upper.copy(), lower.copy()
            down_u[j], up_l[j] = 0.0, 1.0
            return [(lower, down_u), (up_l, upper)]

    if model.complementarity:
        violation = np.array([x[a] * x[b] for a, b in model.complementarity])
        i = int(np.argmax(violation))
        if violation[i] > COMPLEMENTARITY_TOLERANCE:
            a, b = model.complementarity[i]
            first_u, second_u = upper.copy(), upper.copy()
            first_u[a], second_u[b] = 0.0, 0.0
            return [(lower, first_u), (lower, second_u)]

    if model.bilinear:
        violation = np.array([abs(x[w] - x[a] * x[b]) for w, a, b in model.bilinear])
        i = int(np.argmax(violation))
        if violation[i] > BILINEAR_TOLERANCE:
            _, a, b = model.bilinear[i]
            factor = a if upper[a] - lower[a] >= upper[b] - lower[b] else b
            width = upper[factor] - lower[factor]
            if width < MIN_SPLIT_WIDTH:
                return []
            mid = lower[factor] + 0.5 * width
            left_u, right_l = upper.copy(), lower.copy()
            left_u[factor], right_l[factor] = mid, mid
            return [(lower, left_u), (right_l, upper)]
    return None


def _solve_node(model: MipModel, lower: np.ndarray, upper: np.ndarray,
                hint: Optional[LpBasis]) -> Optional[LpSolution]:
    sol = solve(node_program(model, lower, upper), basis_hint=hint)
    if sol.status is LpStatus.INFEASIBLE:
        return None
    if sol.status is LpStatus.UNBOUNDED:
        raise LpNumericalError("node relaxation unbounded on a bounded box")
    return sol


def branch_and_bound(model: MipModel, tolerance: float = 1e-4, node_limit: int = 20000,
                     incumbent_fn: Optional[IncumbentFn] = None,
                     initial_incumbent: Optional[Tuple[float, np.ndarray]] = None,
                     polish_every: int = 10) -> BabResult:
    """求模型的全局上界；返回的上界对所有MIP可行解都成立"""
    started = time.perf_counter()
    best_value, best_bid = (-np.inf, None) if initial_incumbent is None else initial_incumbent
    best_x, best_leaf = None, -np.inf
    closed = -np.inf  # 已关闭（不再细分）节点的上界
    pruned = -np.inf  # 因不超过 incumbent + tolerance 被剪掉的子节点上界

    root = _solve_node(model, model.lp.lower.copy(), model.lp.upper.copy(), None)
    if root is None:
        record_bab(BabStatus.INFEASIBLE.value, 0, time.perf_counter() - started)
        return BabResult(-np.inf, best_value, best_bid, None, BabStatus.INFEASIBLE, 0,
                         time.perf_counter() - started, -np.inf)

    counter = itertools.count()
    heap = [(-root.objective, next(counter), _Node(model.lp.lower.copy(), model.lp.upper.copy(), root, 0))]
    nodes = 0

    def try_incumbent(x: np.ndarray):
        nonlocal best_value, best_bid
        if incumbent_fn is None or model.bid_vars.size == 0:
            return
        value, bid = incumbent_fn(x[model.bid_vars])
        if value > best_value:
            best_value, best_bid = value, bid

    while heap:
        ub = -heap[0][0]
        if ub <= best_value + tolerance or nodes >= node_limit:
            break
        _, _, node = heapq.heappop(heap)
        nodes += 1
        x = node.solution.x
        if nodes == 1 or nodes % polish_every == 0:
            try_incumbent(x)

        children = select_branch(model, x, node.lower, node.upper)
        if children is None:
            # 松弛解满足全部整数/互补/双线性约束
            closed = max(closed, ub)
            if ub > best_leaf:
                best_leaf, best_x = ub, x
            if incumbent_fn is None:
                if ub > best_value:
                    best_value, best_bid = ub, x[model.bid_vars] if model.bid_vars.size else None
            else:
                try_incumbent(x)
            continue
        if not children:
            closed = max(closed, ub)
            continue

        for child_lower, child_upper in children:
            try:
                sol = _solve_node(model, child_lower, child_upper, node.solution.basis)
            except LpNumericalError as e:
                # 子树上界沿用父节点的LP值
                record_fallback("bab_lp")
                logging.warning(f"节点LP数值失败，使用父节点上界关闭该子树: {e.message}")
                closed = max(closed, ub)
                continue
            if sol is None:
                continue
            child_ub = min(sol.objective, ub)
            if child_ub <= best_value + tolerance:
                pruned = max(pruned, child_ub)
                continue
            heapq.heappush(heap, (-child_ub, next(counter), _Node(child_lower, child_upper, sol, node.depth + 1)))

    open_bound = -heap[0][0] if heap else -np.inf
    upper_bound = max(best_value, closed, pruned, open_bound)
    gap = upper_bound - best_value
    status = BabStatus.OPTIMAL if gap <= tolerance + 1e-12 else BabStatus.INCOMPLETE
    seconds = time.perf_counter() - started
    record_bab(status.value, nodes, seconds)
    if status is BabStatus.INCOMPLETE:
        logging.warning(f"分支定界未收敛: 节点 {nodes}，上界 {upper_bound:.6f}，间隙 {gap:.2e}")
    else:
        logging.debug(f"分支定界完成: 节点 {nodes}，上界 {upper_bound:.6f}，用时 {seconds:.2f}s")
    return BabResult(
        upper_bound=upper_bound,
        incumbent_value=best_value,
        incumbent_bid=None if best_bid is None else np.asarray(best_bid, dtype=np.float64),
        incumbent_x=best_x,
        status=status,
        nodes=nodes,
        seconds=seconds,
        root_bound=root.objective,
    )

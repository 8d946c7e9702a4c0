"""
稠密线性规划求解器 - 有界变量修正单纯形法

- 每个约束引入一个松弛变量: A x + s = b，关系符号体现在松弛变量的界上
  (≤: s ≥ 0；≥: s ≤ 0；=: s = 0)，因此自由变量与单边有界变量无需拆分
- 稠密基逆矩阵，乘积形式(eta)更新，每 REFACTOR_PERIOD 次迭代重新求逆
- 两阶段法：第一阶段最小化人工变量之和；可用上次的最优基作为热启动提示跳过第一阶段
- Dantzig 定价；连续退化迭代超过阈值后切换为 Bland 规则防止循环
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from auction.config.settings import FEASIBILITY_TOLERANCE, PIVOT_TOLERANCE
from auction.exceptions import InvalidConfigurationError, LpNumericalError, ShapeMismatchError
from auction.tools.metrics_tool import record_lp

OPTIMALITY_TOLERANCE = 1e-9
REFACTOR_PERIOD = 64
BLAND_THRESHOLD = 50
DEGENERATE_STEP = 1e-12

# 变量状态
BASIC, AT_LOWER, AT_UPPER, AT_ZERO = 0, 1, 2, 3


class Sense(str, Enum):
    MAX = "max"
    MIN = "min"


class Relation(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LinearProgram:
    """max/min cᵀx  s.t.  A x (≤,=,≥) b,  lower ≤ x ≤ upper（界可为±∞）"""
    objective: np.ndarray
    matrix: np.ndarray
    relations: List[Relation]
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    sense: Sense = Sense.MAX
    names: Optional[List[str]] = None

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=np.float64).reshape(-1)
        n = self.objective.size
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(-1, n)
        self.rhs = np.asarray(self.rhs, dtype=np.float64).reshape(-1)
        self.lower = np.asarray(self.lower, dtype=np.float64).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        self.relations = [Relation(r) for r in self.relations]
        self.sense = Sense(self.sense)
        self.validate()

    @classmethod
    def from_rows(cls, objective: Sequence[float],
                  constraints: Sequence[Tuple[Sequence[float], str, float]],
                  bounds: Sequence[Tuple[float, float]], sense: str = "max",
                  names: Optional[List[str]] = None) -> "LinearProgram":
        """由 (系数, 关系, 右端) 列表构造"""
        n = len(objective)
        matrix = np.array([c[0] for c in constraints], dtype=np.float64).reshape(-1, n)
        return cls(
            objective=np.asarray(objective, dtype=np.float64),
            matrix=matrix,
            relations=[c[1] for c in constraints],
            rhs=np.array([c[2] for c in constraints], dtype=np.float64),
            lower=np.array([b[0] for b in bounds], dtype=np.float64),
            upper=np.array([b[1] for b in bounds], dtype=np.float64),
            sense=sense,
            names=names,
        )

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_constraints(self) -> int:
        return self.rhs.size

    def validate(self):
        n, m = self.n_vars, self.n_constraints
        if self.matrix.shape != (m, n):
            raise ShapeMismatchError("constraint matrix", (m, n), self.matrix.shape)
        if len(self.relations) != m:
            raise ShapeMismatchError("relations", m, len(self.relations))
        if self.lower.size != n or self.upper.size != n:
            raise ShapeMismatchError("variable bounds", n, (self.lower.size, self.upper.size))
        if self.names is not None and len(self.names) != n:
            raise ShapeMismatchError("variable names", n, len(self.names))
        if not (np.all(np.isfinite(self.objective)) and np.all(np.isfinite(self.matrix))
                and np.all(np.isfinite(self.rhs))):
            raise InvalidConfigurationError("lp", "non-finite", "coefficients must be finite")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)) or np.any(self.lower > self.upper):
            raise InvalidConfigurationError("lp bounds", "lower > upper", "each variable needs lo <= hi")

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "LinearProgram":
        """同一约束、不同变量界的副本（分支定界节点使用）"""
        return LinearProgram(self.objective, self.matrix, self.relations, self.rhs,
                             lower, upper, self.sense, self.names)

    def with_objective(self, objective: np.ndarray, sense: str) -> "LinearProgram":
        return LinearProgram(objective, self.matrix, self.relations, self.rhs,
                             self.lower, self.upper, sense, self.names)

    def dump(self) -> str:
        """人类可读的文本格式（语法见 CONFIGURATION_GUIDE.md）"""
        names = self.names or [f"x{j}" for j in range(self.n_vars)]
        fmt = lambda v: f"{v:.17g}"
        lines = [
            "LP 1",
            f"sense {self.sense.value}",
            f"vars {self.n_vars}",
        ]
        for j, name in enumerate(names):
            lines.append(f"var {j} {name} {fmt(self.lower[j])} {fmt(self.upper[j])}")
        lines.append("objective " + " ".join(fmt(v) for v in self.objective))
        lines.append(f"constraints {self.n_constraints}")
        for i in range(self.n_constraints):
            terms = " ".join(f"{fmt(v)}*{names[j]}" for j, v in enumerate(self.matrix[i]) if v != 0.0)
            lines.append(f"row {i}: {terms or '0'} {self.relations[i].value} {fmt(self.rhs[i])}")
        lines.append("end")
        return "\n".join(lines) + "\n"


@dataclass
class LpBasis:
    """单纯形基：基变量下标与全部（结构+松弛）变量的状态"""
    basic: np.ndarray
    status: np.ndarray


@dataclass
class LpSolution:
    status: LpStatus
    objective: float = math.nan
    x: Optional[np.ndarray] = None
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    basis: Optional[LpBasis] = None
    iterations: int = 0
    warm_started: bool = False

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


def _slack_bounds(relations: List[Relation]) -> Tuple[np.ndarray, np.ndarray]:
    lo = np.array([0.0 if r is not Relation.GE else -np.inf for r in relations])
    hi = np.array([0.0 if r is not Relation.LE else np.inf for r in relations])
    return lo, hi


class _BoundedSimplex:
    """有界变量修正单纯形法的工作状态（单次求解，非线程共享）"""

    def __init__(self, columns: np.ndarray, rhs: np.ndarray, lower: np.ndarray, upper: np.ndarray,
                 max_iterations: int):
        self.A = columns
        self.b = rhs
        self.lo = lower.copy()
        self.hi = upper.copy()
        self.m = rhs.size
        self.n_struct = columns.shape[1]
        self.max_iterations = max_iterations
        self.iterations = 0
        self.since_refactor = 0
        self.x = np.zeros(self.n_struct)
        self.status = np.zeros(self.n_struct, dtype=np.int64)
        self.basis = np.zeros(self.m, dtype=np.int64)
        self.Binv = np.eye(self.m)
        self.scale = max(1.0, float(np.max(np.abs(rhs)))) if rhs.size else 1.0

    # ---------- 初始化 ----------

    def _place_nonbasic(self, j: int, preferred: int = AT_LOWER):
        lo, hi = self.lo[j], self.hi[j]
        if preferred == AT_UPPER and np.isfinite(hi):
            self.status[j], self.x[j] = AT_UPPER, hi
        elif np.isfinite(lo):
            self.status[j], self.x[j] = AT_LOWER, lo
        elif np.isfinite(hi):
            self.status[j], self.x[j] = AT_UPPER, hi
        else:
            self.status[j], self.x[j] = AT_ZERO, 0.0

    def _basic_values(self) -> np.ndarray:
        x_nb = self.x.copy()
        x_nb[self.basis] = 0.0
        return self.Binv @ (self.b - self.A @ x_nb)

    def _within_bounds(self, values: np.ndarray, idx: np.ndarray) -> bool:
        tol = FEASIBILITY_TOLERANCE * self.scale
        return bool(np.all(values >= self.lo[idx] - tol) and np.all(values <= self.hi[idx] + tol))

    def warm_start(self, hint: LpBasis) -> bool:
        """以提示基启动；提示基不可行或奇异时返回 False"""
        if hint.basic.size != self.m or hint.status.size != self.n_struct:
            return False
        basic = np.asarray(hint.basic, dtype=np.int64)
        if np.any(hint.status[basic] != BASIC) or np.sum(hint.status == BASIC) != self.m:
            return False
        for j in range(self.n_struct):
            if hint.status[j] != BASIC:
                self._place_nonbasic(j, int(hint.status[j]))
        self.status[basic] = BASIC
        self.basis = basic.copy()
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            return False
        if self.m and np.max(np.abs(B @ self.Binv - np.eye(self.m))) > 1e-8:
            return False
        values = self._basic_values()
        if not self._within_bounds(values, self.basis):
            return False
        self.x[self.basis] = values
        return True

    def cold_start(self, n_original: int) -> np.ndarray:
        """松弛变量可行的行以松弛变量为基，其余行引入人工变量；返回人工变量下标"""
        for j in range(self.n_struct):
            self._place_nonbasic(j)
        residual = self.b - self.A[:, :n_original] @ self.x[:n_original]
        tol = FEASIBILITY_TOLERANCE * self.scale
        art_rows, art_signs, art_values = [], [], []
        for i in range(self.m):
            j = n_original + i
            if self.lo[j] - tol <= residual[i] <= self.hi[j] + tol:
                self.basis[i] = j
                self.status[j] = BASIC
                self.x[j] = residual[i]
            else:
                at_upper = residual[i] > self.hi[j]
                self._place_nonbasic(j, AT_UPPER if at_upper else AT_LOWER)
                gap = residual[i] - self.x[j]
                art_rows.append(i)
                art_signs.append(1.0 if gap > 0 else -1.0)
                art_values.append(abs(gap))

        k = len(art_rows)
        art_index = np.arange(self.n_struct, self.n_struct + k)
        if k:
            art_cols = np.zeros((self.m, k))
            art_cols[art_rows, np.arange(k)] = art_signs
            self.A = np.hstack([self.A, art_cols])
            self.lo = np.concatenate([self.lo, np.zeros(k)])
            self.hi = np.concatenate([self.hi, np.full(k, np.inf)])
            self.x = np.concatenate([self.x, np.asarray(art_values)])
            self.status = np.concatenate([self.status, np.full(k, BASIC, dtype=np.int64)])
            self.basis[art_rows] = art_index
        diag = np.ones(self.m)
        diag[art_rows] = art_signs
        self.Binv = np.diag(1.0 / diag)
        return art_index

    # ---------- 迭代 ----------

    def _refactor(self):
        B = self.A[:, self.basis]
        try:
            Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            raise LpNumericalError("singular basis", float(np.linalg.cond(B)), self.iterations)
        if np.max(np.abs(B @ Binv - np.eye(self.m))) > 1e-6:
            raise LpNumericalError("ill-conditioned basis", float(np.linalg.cond(B)), self.iterations)
        self.Binv = Binv
        self.x[self.basis] = self._basic_values()
        self.since_refactor = 0

    def _pivot_update(self, alpha: np.ndarray, r: int):
        row = self.Binv[r] / alpha[r]
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row

    def duals(self, cost: np.ndarray) -> np.ndarray:
        return cost[self.basis] @ self.Binv

    def run(self, cost: np.ndarray) -> LpStatus:
        """最小化 costᵀx；返回 OPTIMAL 或 UNBOUNDED"""
        degenerate, bland = 0, False
        movable = self.hi > self.lo
        while True:
            if self.iterations >= self.max_iterations:
                cond = float(np.linalg.cond(self.A[:, self.basis])) if self.m else 1.0
                raise LpNumericalError("iteration limit reached", cond, self.iterations)
            if self.since_refactor >= REFACTOR_PERIOD:
                self._refactor()

            y = self.duals(cost)
            d = cost - y @ self.A
            nonbasic = self.status != BASIC
            free = self.status == AT_ZERO
            can_inc = nonbasic & movable & ((self.status == AT_LOWER) | free) & (d < -OPTIMALITY_TOLERANCE)
            can_dec = nonbasic & movable & ((self.status == AT_UPPER) | free) & (d > OPTIMALITY_TOLERANCE)
            candidates = can_inc | can_dec
            if not candidates.any():
                return LpStatus.OPTIMAL

            if bland:
                q = int(np.flatnonzero(candidates)[0])
            else:
                q = int(np.argmax(np.where(candidates, np.abs(d), -1.0)))
            direction = 1.0 if can_inc[q] else -1.0

            alpha = self.Binv @ self.A[:, q]
            delta = -direction * alpha
            xb = self.x[self.basis]
            ratios = np.full(self.m, np.inf)
            down = delta < -PIVOT_TOLERANCE
            up = delta > PIVOT_TOLERANCE
            with np.errstate(invalid="ignore"):
                ratios[down] = (xb[down] - self.lo[self.basis][down]) / -delta[down]
                ratios[up] = (self.hi[self.basis][up] - xb[up]) / delta[up]
            ratios = np.maximum(ratios, 0.0)
            t_ratio = float(ratios.min()) if self.m else np.inf
            t_flip = float(self.hi[q] - self.lo[q])

            if not np.isfinite(min(t_ratio, t_flip)):
                return LpStatus.UNBOUNDED

            if t_flip <= t_ratio:
                step = t_flip
                self.x[self.basis] += step * delta
                self.x[q] = self.hi[q] if direction > 0 else self.lo[q]
                self.status[q] = AT_UPPER if direction > 0 else AT_LOWER
            else:
                step = t_ratio
                ties = np.flatnonzero(ratios <= t_ratio + DEGENERATE_STEP)
                if bland:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(alpha[ties]))])
                self.x[self.basis] += step * delta
                self.x[q] += direction * step
                leaving = self.basis[r]
                if delta[r] < 0:
                    self.x[leaving], self.status[leaving] = self.lo[leaving], AT_LOWER
                else:
                    self.x[leaving], self.status[leaving] = self.hi[leaving], AT_UPPER
                self.status[q] = BASIC
                self.basis[r] = q
                self._pivot_update(alpha, r)
                self.since_refactor += 1

            self.iterations += 1
            degenerate = degenerate + 1 if step < DEGENERATE_STEP else 0
            if degenerate >= BLAND_THRESHOLD and not bland:
                logging.debug(f"连续 {degenerate} 次退化迭代，切换为Bland规则")
                bland = True


def solve(lp: LinearProgram, basis_hint: Optional[LpBasis] = None,
          max_iterations: Optional[int] = None) -> LpSolution:
    """求解线性规划；数值失败时抛出 LpNumericalError"""
    m, n = lp.n_constraints, lp.n_vars
    s_lo, s_hi = _slack_bounds(lp.relations)
    columns = np.hstack([lp.matrix, np.eye(m)])
    lower = np.concatenate([lp.lower, s_lo])
    upper = np.concatenate([lp.upper, s_hi])
    sign = -1.0 if lp.sense is Sense.MAX else 1.0
    cost = np.concatenate([sign * lp.objective, np.zeros(m)])
    limit = max_iterations or 50 * (n + m) + 500

    engine = _BoundedSimplex(columns, lp.rhs, lower, upper, limit)
    warm = basis_hint is not None and engine.warm_start(basis_hint)
    if not warm:
        if basis_hint is not None:
            engine = _BoundedSimplex(columns, lp.rhs, lower, upper, limit)
        artificials = engine.cold_start(n)
        if artificials.size:
            phase_one = np.zeros(engine.A.shape[1])
            phase_one[artificials] = 1.0
            engine.run(phase_one)
            infeasibility = float(engine.x[artificials].sum())
            if infeasibility > FEASIBILITY_TOLERANCE * engine.scale:
                record_lp(LpStatus.INFEASIBLE.value, engine.iterations)
                return LpSolution(LpStatus.INFEASIBLE, iterations=engine.iterations)
            engine.hi[artificials] = 0.0
            engine.x[artificials] = np.minimum(engine.x[artificials], 0.0)
            cost = np.concatenate([cost, np.zeros(artificials.size)])

    status = engine.run(cost)
    record_lp(status.value, engine.iterations)
    if status is LpStatus.UNBOUNDED:
        return LpSolution(status, objective=-sign * np.inf, iterations=engine.iterations, warm_started=warm)

    x = np.clip(engine.x[:n], lp.lower, lp.upper)
    y = engine.duals(cost)
    duals = sign * y
    reduced = lp.objective - duals @ lp.matrix
    basis = None
    if np.all(engine.basis < engine.n_struct):
        basis = LpBasis(basic=engine.basis.copy(), status=engine.status[:engine.n_struct].copy())
    return LpSolution(
        status=LpStatus.OPTIMAL,
        objective=float(lp.objective @ x),
        x=x,
        duals=duals,
        reduced_costs=reduced,
        basis=basis,
        iterations=engine.iterations,
        warm_started=warm,
    )


def dual_bound(lp: LinearProgram, duals: np.ndarray) -> float:
    """拉格朗日对偶界：任意符号合法的对偶向量都给出目标值的界（max为上界，min为下界）"""
    duals = np.asarray(duals, dtype=np.float64)
    reduced = lp.objective - duals @ lp.matrix
    total = float(duals @ lp.rhs)
    for j in range(lp.n_vars):
        r = reduced[j]
        if r == 0.0:
            continue
        if lp.sense is Sense.MAX:
            bound = lp.upper[j] if r > 0 else lp.lower[j]
        else:
            bound = lp.lower[j] if r > 0 else lp.upper[j]
        total += r * bound
    return total

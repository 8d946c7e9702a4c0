"""
遗憾认证

对估值 v 与买家 i：在 v 上只放开第 i 行出价到 [0,1]^k，精确求 max u_i(b_i, v_{-i})，
认证遗憾 = 该上界 − 真实出价效用。多个 (估值, 买家) 对之间互相独立，可并行。
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from auction.config.unified_config import CertifyConfig
from auction.models.auction_net import AuctionNet, as_bids_tensor, forward, forward_tensors, utility
from auction.training.ibp import ibp_bounds
from auction.training.misreport import pgd_misreports, regret_hat
from auction.verification.bounds import compute_bounds, count_unstable_relus
from auction.verification.branch_and_bound import BabStatus, branch_and_bound
from auction.verification.mip import check_encodable, encode
from auction.exceptions import ShapeMismatchError

REGRET_FLOOR = -1e-6
PIN_PADDING = 1e-9

CERTIFICATE_COLUMNS = [
    "profile_id", "agent", "truthful_bid", "truthful_utility", "certified_max_utility",
    "certified_regret", "empirical_regret", "incumbent_misreport", "incumbent_utility",
    "gap", "nodes", "seconds", "residual", "status", "unstable_relus", "bound_fallbacks",
]


def format_vector(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.asarray(values).reshape(-1))


@dataclass
class Certificate:
    """单个 (估值, 买家) 的遗憾证书"""
    profile_id: int
    agent: int
    profile: np.ndarray
    truthful_utility: float
    certified_max_utility: float
    certified_regret: float
    incumbent_misreport: np.ndarray
    incumbent_utility: float
    gap: float
    nodes_explored: int
    solve_time: float
    consistency_residual: float
    status: str
    empirical_regret: float = math.nan
    unstable_relus: int = 0
    bound_fallbacks: int = 0

    @property
    def complete(self) -> bool:
        return self.status == BabStatus.OPTIMAL.value

    def to_row(self) -> Dict[str, Any]:
        return {
            "profile_id": self.profile_id,
            "agent": self.agent,
            "truthful_bid": format_vector(self.profile[self.agent]),
            "truthful_utility": self.truthful_utility,
            "certified_max_utility": self.certified_max_utility,
            "certified_regret": self.certified_regret,
            "empirical_regret": self.empirical_regret,
            "incumbent_misreport": format_vector(self.incumbent_misreport),
            "incumbent_utility": self.incumbent_utility,
            "gap": self.gap,
            "nodes": self.nodes_explored,
            "seconds": self.solve_time,
            "residual": self.consistency_residual,
            "status": self.status,
            "unstable_relus": self.unstable_relus,
            "bound_fallbacks": self.bound_fallbacks,
        }


def misreport_box(profile: np.ndarray, agent: int) -> Tuple[np.ndarray, np.ndarray]:
    """其他买家固定为真实出价，买家 agent 的一行放开到 [0,1]"""
    n, k = profile.shape
    lower, upper = profile.reshape(-1).copy(), profile.reshape(-1).copy()
    lower[agent * k:(agent + 1) * k] = 0.0
    upper[agent * k:(agent + 1) * k] = 1.0
    return lower, upper


def with_bid(profile: np.ndarray, agent: int, bid: np.ndarray) -> np.ndarray:
    bids = profile.copy()
    bids[agent] = bid
    return bids


class _Polisher:
    """把松弛解中的出价投影回盒内，再做若干步PGD，返回真实可达的效用"""

    def __init__(self, net: AuctionNet, profile: np.ndarray, agent: int, steps: int, lr: float):
        self.net = net
        self.profile = profile
        self.agent = agent
        self.steps = steps
        self.lr = lr
        self._profiles = as_bids_tensor(profile[None])
        self._fn = lambda bids: forward_tensors(net, bids)

    def __call__(self, bid: np.ndarray) -> Tuple[float, np.ndarray]:
        bid = np.clip(np.asarray(bid, dtype=np.float64), 0.0, 1.0)
        init = as_bids_tensor(with_bid(self.profile, self.agent, bid)[None])
        best, best_u, _ = pgd_misreports(self._fn, self._profiles, self.steps, self.lr, init=init)
        return float(best_u[0, self.agent]), best[0, self.agent].numpy().copy()


def consistency_residual(net: AuctionNet, profile: np.ndarray, agent: int, bid: np.ndarray,
                         config: CertifyConfig) -> float:
    """把出价固定在 bid 上重新编码求解，与前向计算比较分配、支付与效用的最大偏差"""
    bids = with_bid(profile, agent, np.clip(bid, 0.0, 1.0))
    point = bids.reshape(-1)
    bounds = ibp_bounds(net, (point - PIN_PADDING, point + PIN_PADDING))
    model = encode(net, profile, agent, bounds, config)
    result = branch_and_bound(model, config.tolerance, config.node_limit)
    if result.incumbent_x is None:
        return math.nan

    x = result.incumbent_x
    out = forward(net, bids)
    errors = [
        np.max(np.abs(x[model.allocation_vars] - out.full_allocation)),
        abs(x[model.payment_var] - out.payment[agent]),
        abs(model.objective_value(x) - utility(out, profile, agent)),
    ]
    return float(max(errors))


def certify_regret(net: AuctionNet, profile: np.ndarray, agent: int,
                   config: Optional[CertifyConfig] = None, profile_id: int = 0,
                   tolerance: Optional[float] = None) -> Certificate:
    """买家 agent 在估值 profile 处的遗憾证书"""
    config = config or CertifyConfig()
    tolerance = config.tolerance if tolerance is None else tolerance
    check_encodable(net)
    cfg = net.config
    profile = np.asarray(profile, dtype=np.float64)
    if profile.shape != (cfg.n_agents, cfg.n_items):
        raise ShapeMismatchError("profile", (cfg.n_agents, cfg.n_items), profile.shape)
    if not 0 <= agent < cfg.n_agents:
        raise ShapeMismatchError("agent", f"[0, {cfg.n_agents})", agent)

    started = time.perf_counter()
    bounds = compute_bounds(net, misreport_box(profile, agent), config.bound_method, config.stable_threshold)
    model = encode(net, profile, agent, bounds, config)
    truthful = utility(forward(net, profile), profile, agent)

    polisher = _Polisher(net, profile, agent, config.polish_steps, config.polish_lr)
    result = branch_and_bound(
        model,
        tolerance=tolerance,
        node_limit=config.node_limit,
        incumbent_fn=polisher,
        initial_incumbent=(truthful, profile[agent].copy()),
        polish_every=config.polish_every,
    )
    seconds = time.perf_counter() - started

    raw_regret = result.upper_bound - truthful
    if raw_regret < REGRET_FLOOR:
        logging.warning(f"认证上界低于真实效用 ({raw_regret:.3e})，估值 {profile_id} 买家 {agent}")
    regret = max(max(raw_regret, REGRET_FLOOR), 0.0)

    incumbent = result.incumbent_bid if result.incumbent_bid is not None else profile[agent].copy()
    residual = consistency_residual(net, profile, agent, incumbent, config) if config.residual_check else math.nan

    empirical = math.nan
    if config.empirical_steps > 0:
        empirical = regret_hat(net, profile, agent, config.empirical_steps, config.polish_lr)

    cert = Certificate(
        profile_id=profile_id,
        agent=agent,
        profile=profile,
        truthful_utility=truthful,
        certified_max_utility=result.upper_bound,
        certified_regret=regret,
        incumbent_misreport=incumbent,
        incumbent_utility=result.incumbent_value,
        gap=result.gap,
        nodes_explored=result.nodes,
        solve_time=seconds,
        consistency_residual=residual,
        status=result.status.value,
        empirical_regret=empirical,
        unstable_relus=count_unstable_relus(bounds, config.stable_threshold),
        bound_fallbacks=int(sum(np.sum(f) for f in bounds.fallback)),
    )
    if not cert.complete:
        logging.warning(f"证书未完成: 估值 {profile_id} 买家 {agent}，间隙 {cert.gap:.2e}")
    logging.info(f"证书 #{profile_id}/{agent}: 认证遗憾 {regret:.6f} 经验遗憾 {empirical:.6f} "
                 f"节点 {result.nodes} 用时 {seconds:.2f}s 残差 {residual:.1e}")
    return cert


def certify_batch(net: AuctionNet, profiles: np.ndarray, agents: Optional[Sequence[int]] = None,
                  config: Optional[CertifyConfig] = None, profile_ids: Optional[Sequence[int]] = None,
                  deterministic: bool = True,
                  results: Optional[List[Certificate]] = None) -> List[Certificate]:
    """批量认证；结果顺序与 (估值, 买家) 的输入顺序一致

    传入 results 时证书按完成顺序追加到该列表，中途失败也能保留已完成的部分。
    """
    config = config or CertifyConfig()
    profiles = np.asarray(profiles, dtype=np.float64)
    if profiles.ndim == 2:
        profiles = profiles[None]
    agents = list(range(net.config.n_agents)) if agents is None else list(agents)
    ids = list(range(len(profiles))) if profile_ids is None else list(profile_ids)
    if len(ids) != len(profiles):
        raise ShapeMismatchError("profile_ids", len(profiles), len(ids))
    tasks = [(ids[p], profiles[p], a) for p in range(len(profiles)) for a in agents]

    results = [] if results is None else results
    workers = 1 if deterministic else config.workers
    logging.info(f"开始认证 {len(tasks)} 个 (估值, 买家) 对，并行度 {workers}")
    if workers == 1:
        for pid, profile, a in tasks:
            results.append(certify_regret(net, profile, a, config, pid))
        return results

    # torch 内部线程与外层线程池叠加会过度订阅
    previous_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for cert in pool.map(lambda t: certify_regret(net, t[1], t[2], config, t[0]), tasks):
                results.append(cert)
    finally:
        torch.set_num_threads(previous_threads)
    return results


def certificates_frame(certificates: Sequence[Certificate]) -> pd.DataFrame:
    return pd.DataFrame([c.to_row() for c in certificates], columns=CERTIFICATE_COLUMNS)

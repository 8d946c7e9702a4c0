# 认证包：单纯形LP、Planet界、MIP编码、分支定界与遗憾证书
from auction.verification.lp import LinearProgram, LpSolution, LpStatus, solve
from auction.verification.bounds import compute_bounds, planet_bounds
from auction.verification.mip import MipModel, encode
from auction.verification.branch_and_bound import BabResult, BabStatus, branch_and_bound
from auction.verification.certifier import Certificate, certify_batch, certify_regret

__all__ = [
    "LinearProgram",
    "LpSolution",
    "LpStatus",
    "solve",
    "compute_bounds",
    "planet_bounds",
    "MipModel",
    "encode",
    "BabResult",
    "BabStatus",
    "branch_and_bound",
    "Certificate",
    "certify_batch",
    "certify_regret",
]

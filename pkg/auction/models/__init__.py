# 拍卖网络模型包
from auction.models.auction_net import (
    Activation,
    AuctionModule,
    AuctionNet,
    DenseLayer,
    Outcome,
    OutcomeAdjoints,
    forward,
    gradients,
    hard_sigmoid,
    sparsemax,
    sparsemax_jacobian,
    utility,
)

__all__ = [
    "Activation",
    "AuctionModule",
    "AuctionNet",
    "DenseLayer",
    "Outcome",
    "OutcomeAdjoints",
    "forward",
    "gradients",
    "hard_sigmoid",
    "sparsemax",
    "sparsemax_jacobian",
    "utility",
]

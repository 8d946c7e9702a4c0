"""
知识蒸馏 - 以softmax头的教师网络输出监督无惩罚(PenaltyFree)学生网络
"""

import numpy as np
import torch

from auction.models.auction_net import AuctionNet, OutcomeTensors, as_bids_tensor, forward_tensors
from auction.exceptions import ShapeMismatchError


def _flatten_outputs(out: OutcomeTensors, batch_dims: int) -> torch.Tensor:
    alloc = out.allocation.reshape(*out.allocation.shape[:batch_dims], -1)
    return torch.cat([alloc, out.payment], dim=-1)


def distill_loss(student: OutcomeTensors, teacher: OutcomeTensors, weight: float) -> torch.Tensor:
    """weight × MSE，均值取在分配与支付拼接后的全部输出坐标上"""
    if student.allocation.shape != teacher.allocation.shape or student.payment.shape != teacher.payment.shape:
        raise ShapeMismatchError("distill outputs", tuple(teacher.allocation.shape), tuple(student.allocation.shape))
    batch_dims = student.payment.dim() - 1
    s = _flatten_outputs(student, batch_dims)
    t = _flatten_outputs(teacher, batch_dims).detach()
    return weight * torch.mean((s - t) ** 2)


def distill(teacher: AuctionNet, student: AuctionNet, batch: np.ndarray, weight: float = 1.0 / 400.0) -> float:
    """两个冻结网络在一批出价上的蒸馏损失项"""
    if teacher.config.setting != student.config.setting:
        raise ShapeMismatchError("distill setting", teacher.config.setting, student.config.setting)
    bids = as_bids_tensor(batch)
    with torch.no_grad():
        return float(distill_loss(forward_tensors(student, bids), forward_tensors(teacher, bids), weight))

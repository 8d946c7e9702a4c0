"""
估值数据集 - 按种子在 [0,1]^{n×k} 上独立均匀采样
"""

import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from auction.exceptions import InvalidConfigurationError


@dataclass
class Dataset:
    """估值样本集合；profiles 形状为 (count, n, k)"""
    profiles: np.ndarray
    seed: int
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        self.profiles = np.asarray(self.profiles, dtype=np.float64)
        if self.profiles.ndim != 3:
            raise InvalidConfigurationError("profiles", self.profiles.shape, "expected (count, n, k)")

    def __len__(self) -> int:
        return self.profiles.shape[0]

    @property
    def n_agents(self) -> int:
        return self.profiles.shape[1]

    @property
    def n_items(self) -> int:
        return self.profiles.shape[2]

    def batches(self, batch_size: int, epoch: int) -> Iterator[np.ndarray]:
        """按 (seed, epoch) 确定的顺序打乱后切分批次"""
        rng = np.random.default_rng([self.seed, epoch])
        order = rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            yield self.profiles[order[start:start + batch_size]]


def generate_dataset(n_agents: int, n_items: int, count: int, seed: int,
                     low: float = 0.0, high: float = 1.0) -> Dataset:
    """生成独立同分布的均匀估值；相同种子结果逐位一致"""
    if count < 1:
        raise InvalidConfigurationError("count", count, "must be positive")
    if not high > low:
        raise InvalidConfigurationError("support", (low, high), "high must exceed low")
    rng = np.random.default_rng(seed)
    profiles = low + (high - low) * rng.random((count, n_agents, n_items))
    logging.debug(f"生成数据集: {count} 个 {n_agents}x{n_items} 估值样本，种子 {seed}")
    return Dataset(profiles=profiles, seed=seed, low=low, high=high)

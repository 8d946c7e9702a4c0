# settings.py
import os
import logging
from pathlib import Path

from dotenv import load_dotenv

# 加载.env文件中的环境变量
load_dotenv()

# 日志配置
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
LOG_FILE = os.getenv("LOG_FILE", "logs/auction.log")

# 数值容差（全局共享）
PIVOT_TOLERANCE = 1e-9
FEASIBILITY_TOLERANCE = 1e-7
IR_EPSILON = 1e-9

# 路径配置
OUTPUT_DIR = os.getenv("AUCTION_OUTPUT_DIR", "data/outputs")
EXPERIMENT_DIR = "config/experiments"

_logging_ready = False


def setup_logging(level: str = None, log_file: str = None):
    """配置统一的日志系统（重复调用无副作用）"""
    global _logging_ready
    if _logging_ready:
        return

    level = (level or LOG_LEVEL).upper()
    log_file = log_file or LOG_FILE

    # 确保日志目录存在
    Path(log_file).parent.mkdir(parents=True, exist_ok=True)

    # 配置日志格式
    log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format=log_format,
        handlers=[
            logging.FileHandler(log_file, encoding='utf-8'),
            logging.StreamHandler()  # 同时输出到控制台
        ]
    )
    _logging_ready = True
    logging.info(f"日志系统初始化完成，级别: {level}，文件: {log_file}")


def configure_determinism(deterministic: bool, seed: int = 0):
    """确定性模式：单线程、确定性算法、固定随机种子"""
    import torch

    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    logging.debug(f"确定性模式={deterministic}，种子={seed}")

"""
统一配置管理中心 - 支持YAML配置文件与环境变量覆盖
为拍卖网络的训练、认证与实验脚本提供类型化配置
"""

import os
import hashlib
import json
import logging
import threading
from enum import Enum
from pathlib import Path
from typing import Dict, Any, Optional, List
from dataclasses import dataclass, field, asdict, fields

import yaml
from dotenv import load_dotenv

from auction.exceptions import InvalidConfigurationError

# 加载环境变量
load_dotenv()


class IRMode(str, Enum):
    """个体理性(IR)的实现方式"""
    FRACTIONAL = "fractional"        # 分数支付头，结构上保证IR
    PENALTY_FREE = "penalty_free"    # 直接输出支付，训练时加IR惩罚


class HeadStyle(str, Enum):
    """输出头风格"""
    CERTIFIABLE = "certifiable"  # sparsemax分配 + 分段线性sigmoid支付
    REGRETNET = "regretnet"      # softmax分配 + sigmoid支付，仅作蒸馏教师


def _raise_if_errors(section: str, errors: List[str], snapshot: Dict[str, Any]):
    if errors:
        raise InvalidConfigurationError(section, snapshot, "; ".join(errors))


@dataclass
class AuctionConfig:
    """拍卖网络结构配置"""
    n_agents: int = 1
    n_items: int = 2
    trunk_widths: List[int] = field(default_factory=lambda: [64, 64])
    ir_mode: IRMode = IRMode.FRACTIONAL
    allow_dummy_agent: bool = True
    head_style: HeadStyle = HeadStyle.CERTIFIABLE

    def __post_init__(self):
        self.ir_mode = IRMode(self.ir_mode)
        self.head_style = HeadStyle(self.head_style)
        self.trunk_widths = [int(w) for w in self.trunk_widths]
        errors = []
        if self.n_agents < 1:
            errors.append("n_agents must be >= 1")
        if self.n_items < 1:
            errors.append("n_items must be >= 1")
        if not self.trunk_widths:
            errors.append("trunk_widths must be nonempty")
        if any(w < 1 for w in self.trunk_widths):
            errors.append("trunk widths must be positive")
        if self.head_style is HeadStyle.REGRETNET and self.ir_mode is not IRMode.FRACTIONAL:
            errors.append("regretnet heads use the fractional payment")
        _raise_if_errors("auction", errors, self.to_dict())

    @property
    def n_rows(self) -> int:
        """分配矩阵的行数（含虚拟买家行）"""
        return self.n_agents + (1 if self.allow_dummy_agent else 0)

    @property
    def setting(self) -> str:
        return f"{self.n_agents}x{self.n_items}"

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["ir_mode"] = IRMode(self.ir_mode).value
        data["head_style"] = HeadStyle(self.head_style).value
        return data


@dataclass
class TrainConfig:
    """增广拉格朗日训练配置（桌面规模默认值）"""
    batch_size: int = 500
    epochs: int = 80
    lr: float = 1e-3
    train_count: int = 20000
    misreport_steps_train: int = 25
    misreport_lr: float = 0.02
    misreport_steps_eval: int = 1000
    lambda_init: float = 5.0
    rho_rgt_init: float = 1.0
    rho_rgt_inc: float = 0.05
    lambda_update_period: int = 6
    mu_init: float = 5.0
    rho_irv: float = 1.0
    rho_irv_inc: float = 0.0
    mu_update_period: int = 5
    mu_increment: float = 5.0
    stability_weight: float = 0.0
    distill_weight: float = 1.0 / 400.0
    seed: int = 0

    def __post_init__(self):
        errors = []
        for name in ("batch_size", "epochs", "train_count"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be positive")
        for name in ("lr", "misreport_lr", "rho_rgt_init", "rho_irv"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be positive")
        for name in ("rho_rgt_inc", "rho_irv_inc", "mu_increment", "stability_weight",
                     "distill_weight", "lambda_init", "mu_init"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be nonnegative")
        if not 0.5 <= self.rho_rgt_init <= 2.0:
            errors.append("rho_rgt_init must lie in [0.5, 2]")
        for name in ("lambda_update_period", "mu_update_period"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.misreport_steps_train < 0 or self.misreport_steps_eval < 0:
            errors.append("misreport steps must be nonnegative")
        _raise_if_errors("train", errors, asdict(self))

    def config_hash(self) -> str:
        """训练配置的内容哈希，写入模型文件的来源信息"""
        payload = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class CertifyConfig:
    """认证（分支定界）配置"""
    tolerance: float = 1e-4
    node_limit: int = 20000
    polish_steps: int = 50
    polish_lr: float = 0.02
    polish_every: int = 10
    stable_threshold: float = 1e-9
    elide_stable: bool = True
    complementarity: str = "binary"   # binary: 指示变量big-M; branch: 直接在互补对上分支
    bound_method: str = "planet"      # planet 或 ibp
    empirical_steps: int = 1000
    workers: int = 1
    residual_check: bool = True

    def __post_init__(self):
        errors = []
        if not self.tolerance > 0:
            errors.append("tolerance must be positive")
        if self.node_limit < 1:
            errors.append("node_limit must be >= 1")
        if self.polish_steps < 0 or self.polish_every < 1:
            errors.append("polish settings out of range")
        if self.complementarity not in ("binary", "branch"):
            errors.append("complementarity must be 'binary' or 'branch'")
        if self.bound_method not in ("planet", "ibp"):
            errors.append("bound_method must be 'planet' or 'ibp'")
        if self.workers < 1:
            errors.append("workers must be >= 1")
        _raise_if_errors("certify", errors, asdict(self))


# 允许的实验组合：附录表中的六行 + 更大规模的扩展实验
_TABLE_SETTINGS = {(1, 2), (2, 2)}
_SCALING_SETTINGS = {(2, 3), (3, 2), (3, 3)}


@dataclass
class ExperimentSpec:
    """单个实验（主结果表的一行或扩展实验）的描述"""
    name: str = "1x2_fractional_reg"
    auction: AuctionConfig = field(default_factory=AuctionConfig)
    relu_reg: bool = True
    clip_payments: bool = True
    distill: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    certify_points: int = 100
    evaluate_points: int = 1000
    test_seed: int = 1
    model_path: Optional[str] = None
    enabled: bool = True
    published_reference: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.auction, dict):
            self.auction = AuctionConfig(**self.auction)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if isinstance(self.certify, dict):
            self.certify = CertifyConfig(**self.certify)
        errors = []
        key = (self.auction.n_agents, self.auction.n_items)
        if key in _SCALING_SETTINGS:
            if self.auction.ir_mode is not IRMode.PENALTY_FREE:
                errors.append("scaling runs use the penalty_free architecture")
        elif key not in _TABLE_SETTINGS:
            errors.append(f"unsupported setting {key[0]}x{key[1]}")
        if self.auction.head_style is not HeadStyle.CERTIFIABLE:
            errors.append("experiments certify the certifiable head style")
        if self.certify_points < 1 or self.evaluate_points < 1:
            errors.append("point counts must be positive")
        _raise_if_errors("experiment", errors, {"name": self.name})

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["auction"] = self.auction.to_dict()
        return data


@dataclass
class SystemConfig:
    """运行环境配置（由环境变量覆盖）"""
    deterministic: bool = True
    workers: int = 1
    node_limit: Optional[int] = None
    output_dir: str = "data/outputs"
    debug_mode: bool = False
    version: str = "1.0.0"

    def __post_init__(self):
        self._load_from_environment()

    def _load_from_environment(self):
        """从环境变量加载配置"""
        if os.getenv("AUCTION_DETERMINISTIC"):
            self.deterministic = os.getenv("AUCTION_DETERMINISTIC").lower() == "true"
        if os.getenv("AUCTION_WORKERS"):
            self.workers = int(os.getenv("AUCTION_WORKERS"))
        if os.getenv("AUCTION_NODE_LIMIT"):
            self.node_limit = int(os.getenv("AUCTION_NODE_LIMIT"))
        if os.getenv("AUCTION_OUTPUT_DIR"):
            self.output_dir = os.getenv("AUCTION_OUTPUT_DIR")
        if os.getenv("DEBUG_MODE"):
            self.debug_mode = os.getenv("DEBUG_MODE").lower() == "true"
        if self.deterministic:
            self.workers = 1


@dataclass
class RunConfig:
    """完整的运行配置"""
    auction: AuctionConfig = field(default_factory=AuctionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    system: SystemConfig = field(default_factory=SystemConfig)

    def __post_init__(self):
        # 环境变量优先于文件中的认证并行度与节点上限
        self.certify.workers = self.system.workers if self.system.deterministic \
            else max(self.certify.workers, self.system.workers)
        if self.system.node_limit:
            self.certify.node_limit = self.system.node_limit


def _filter_known(cls, data: Dict[str, Any], section: str) -> Dict[str, Any]:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidConfigurationError(section, unknown, "unknown keys")
    return data


def load_yaml(path: str) -> Dict[str, Any]:
    """读取YAML文件，空文件返回空字典"""
    with open(path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """从字典创建运行配置；未知键视为错误"""
    _filter_known(RunConfig, data, "run")
    return RunConfig(
        auction=AuctionConfig(**_filter_known(AuctionConfig, data.get("auction", {}), "auction")),
        train=TrainConfig(**_filter_known(TrainConfig, data.get("train", {}), "train")),
        certify=CertifyConfig(**_filter_known(CertifyConfig, data.get("certify", {}), "certify")),
        system=SystemConfig(**_filter_known(SystemConfig, data.get("system", {}), "system")),
    )


def config_to_dict(config: RunConfig) -> Dict[str, Any]:
    """将配置对象转换为字典"""
    return {
        "auction": config.auction.to_dict(),
        "train": asdict(config.train),
        "certify": asdict(config.certify),
        "system": asdict(config.system),
    }


def load_experiment_spec(path: str) -> ExperimentSpec:
    """读取单个实验描述文件"""
    data = load_yaml(path)
    _filter_known(ExperimentSpec, data, "experiment")
    for key, cls in (("auction", AuctionConfig), ("train", TrainConfig), ("certify", CertifyConfig)):
        if key in data:
            _filter_known(cls, data[key], key)
    return ExperimentSpec(**data)


class UnifiedConfigManager:
    """统一配置管理器"""

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = Path(config_file) if config_file else Path("config/auction_config.yaml")
        self._config: Optional[RunConfig] = None
        self._config_lock = threading.RLock()
        self.reload_config()

    @property
    def config(self) -> RunConfig:
        """获取当前配置"""
        with self._config_lock:
            if self._config is None:
                self.reload_config()
            return self._config

    def reload_config(self):
        """重新加载配置；文件中的非法值直接抛出，不回退默认值"""
        with self._config_lock:
            if self.config_file.exists():
                data = load_yaml(str(self.config_file))
            else:
                logging.info(f"配置文件不存在 {self.config_file}，使用默认配置")
                data = {}
            self._config = config_from_dict(data)
            logging.info("配置加载成功")

    def save_config(self, config: RunConfig = None):
        """保存配置到文件"""
        config = config or self._config
        if not config:
            return
        self.config_file.parent.mkdir(parents=True, exist_ok=True)
        with open(self.config_file, "w", encoding="utf-8") as f:
            yaml.safe_dump(config_to_dict(config), f, default_flow_style=False, allow_unicode=True)
        logging.info(f"配置已保存到: {self.config_file}")

    def get_config_summary(self) -> Dict[str, Any]:
        """获取配置摘要信息"""
        config = self.config
        return {
            "version": config.system.version,
            "setting": config.auction.setting,
            "ir_mode": config.auction.ir_mode.value,
            "trunk_widths": list(config.auction.trunk_widths),
            "deterministic": config.system.deterministic,
            "workers": config.certify.workers,
            "epochs": config.train.epochs,
            "tolerance": config.certify.tolerance,
            "config_file": str(self.config_file),
        }


# 全局配置管理器实例
_global_config_manager: Optional[UnifiedConfigManager] = None


def get_config_manager() -> UnifiedConfigManager:
    """获取全局配置管理器"""
    global _global_config_manager
    if _global_config_manager is None:
        _global_config_manager = UnifiedConfigManager()
    return _global_config_manager


def get_config() -> RunConfig:
    """获取当前配置"""
    return get_config_manager().config

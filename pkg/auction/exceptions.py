"""
自定义异常类 - 实现精细化的异常分类和分级处理
为可认证拍卖网络的训练、求解与认证流程提供统一的错误处理框架
"""

from typing import Optional, Dict, Any


class AuctionBaseException(Exception):
    """拍卖系统基础异常类"""

    def __init__(self, message: str, error_code: str = "AUCTION_ERROR",
                 details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.error_code = error_code
        self.details = details or {}
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典格式，便于日志记录和CSV诊断输出"""
        return {
            "error_code": self.error_code,
            "message": self.message,
            "details": self.details,
            "exception_type": self.__class__.__name__
        }


# ============ 配置相关异常 ============
class ConfigurationException(AuctionBaseException):
    """配置相关异常基类"""

    def __init__(self, message: str, config_key: Optional[str] = None, **kwargs):
        details = kwargs.get("details", {})
        if config_key:
            details["config_key"] = config_key
        super().__init__(message, "CONFIGURATION_ERROR", details)


class MissingConfigurationError(ConfigurationException):
    """缺少配置异常"""

    def __init__(self, config_key: str, **kwargs):
        message = f"缺少必要配置: {config_key}"
        super().__init__(message, config_key, details=kwargs)


class InvalidConfigurationError(ConfigurationException):
    """配置无效异常"""

    def __init__(self, config_key: str, config_value: Any, reason: str, **kwargs):
        message = f"配置无效: {config_key}={config_value} - {reason}"
        super().__init__(message, config_key, details={
            "config_value": config_value,
            "reason": reason,
            **kwargs
        })


class ShapeMismatchError(ConfigurationException):
    """出价矩阵/网络输出形状与配置不符"""

    def __init__(self, what: str, expected: Any, actual: Any, **kwargs):
        message = f"形状不匹配: {what} 期望 {expected}, 实际 {actual}"
        super().__init__(message, what, details={
            "expected": str(expected),
            "actual": str(actual),
            **kwargs
        })


# ============ 模型文件相关异常 ============
class ModelFileError(AuctionBaseException):
    """模型文件异常基类"""

    def __init__(self, message: str, path: Optional[str] = None, **kwargs):
        details = kwargs.get("details", {})
        if path:
            details["path"] = path
        super().__init__(message, "MODEL_FILE_ERROR", details)


class ModelFileParseError(ModelFileError):
    """模型文件解析失败，记录出错的字节偏移"""

    def __init__(self, path: str, byte_offset: int, reason: str, **kwargs):
        message = f"模型文件解析失败: {path} (字节偏移 {byte_offset}) - {reason}"
        self.byte_offset = byte_offset
        super().__init__(message, path, details={
            "byte_offset": byte_offset,
            "reason": reason,
            **kwargs
        })


class ModelVersionError(ModelFileError):
    """模型文件版本不受支持"""

    def __init__(self, path: str, found: Any, supported: Any, **kwargs):
        message = f"模型文件版本不受支持: {path} (文件版本 {found}, 支持版本 {supported})"
        super().__init__(message, path, details={
            "found": found,
            "supported": supported,
            **kwargs
        })


# ============ 求解器相关异常 ============
class SolverException(AuctionBaseException):
    """LP/MIP求解相关异常基类"""

    def __init__(self, message: str, solver: Optional[str] = None, **kwargs):
        details = kwargs.get("details", {})
        if solver:
            details["solver"] = solver
        super().__init__(message, "SOLVER_ERROR", details)


class LpNumericalError(SolverException):
    """单纯形法数值失败（基矩阵奇异、迭代次数耗尽）"""

    def __init__(self, reason: str, condition_number: Optional[float] = None,
                 iterations: Optional[int] = None, **kwargs):
        message = f"LP数值失败: {reason}"
        if condition_number is not None:
            message += f" (基矩阵条件数 {condition_number:.3e})"
        super().__init__(message, "simplex", details={
            "reason": reason,
            "condition_number": condition_number,
            "iterations": iterations,
            **kwargs
        })


class UnboundedNeuronError(SolverException):
    """神经元界无穷大，拒绝编码"""

    def __init__(self, layer: str, neuron: int, lower: float, upper: float, **kwargs):
        message = f"神经元界非有限，拒绝编码: {layer}[{neuron}] ∈ [{lower}, {upper}]"
        super().__init__(message, "encoder", details={
            "layer": layer,
            "neuron": neuron,
            "lower": lower,
            "upper": upper,
            **kwargs
        })


class NotEncodableError(SolverException):
    """网络包含无法精确编码的激活函数"""

    def __init__(self, activation: str, layer: str, **kwargs):
        message = f"激活函数无法进行MIP编码: {activation} (层 {layer})"
        super().__init__(message, "encoder", details={
            "activation": activation,
            "layer": layer,
            **kwargs
        })


# ============ 训练相关异常 ============
class TrainingException(AuctionBaseException):
    """训练相关异常基类"""

    def __init__(self, message: str, epoch: Optional[int] = None, **kwargs):
        details = kwargs.get("details", {})
        if epoch is not None:
            details["epoch"] = epoch
        super().__init__(message, "TRAINING_ERROR", details)


class TrainingDivergenceError(TrainingException):
    """损失出现非有限值，训练中止"""

    def __init__(self, epoch: int, batch: int, loss: float, **kwargs):
        message = f"训练发散: epoch {epoch} batch {batch} 损失 {loss}"
        super().__init__(message, epoch, details={
            "batch": batch,
            "loss": loss,
            **kwargs
        })


# ============ 分级异常处理器 ============
class ExceptionHandler:
    """异常处理器 - 提供统一的分级异常处理与CLI退出码映射"""

    # 异常级别映射
    SEVERITY_LEVELS = {
        "CRITICAL": 4,    # 结果不可信，必须中止
        "HIGH": 3,        # 当前任务失败，已保存部分结果
        "MEDIUM": 2,      # 单个点/单个神经元降级处理
        "LOW": 1,         # 仅记录
    }

    @classmethod
    def get_exception_severity(cls, exception: Exception) -> str:
        """获取异常的严重级别"""
        if isinstance(exception, (
            TrainingDivergenceError,
            ModelVersionError,
            MissingConfigurationError
        )):
            return "CRITICAL"

        elif isinstance(exception, (
            ModelFileParseError,
            InvalidConfigurationError,
            ShapeMismatchError,
            NotEncodableError,
            UnboundedNeuronError
        )):
            return "HIGH"

        elif isinstance(exception, (
            LpNumericalError,
            SolverException
        )):
            return "MEDIUM"

        elif isinstance(exception, AuctionBaseException):
            return "LOW"

        else:
            return "HIGH"  # 未知异常按任务失败处理

    @classmethod
    def exit_code(cls, exception: BaseException) -> int:
        """CLI退出码: 配置/参数错误为2，其余运行时错误为1"""
        if isinstance(exception, (MissingConfigurationError, InvalidConfigurationError)):
            return 2
        return 1

    @classmethod
    def format_exception_for_logging(cls, exception: Exception) -> Dict[str, Any]:
        """格式化异常信息用于日志记录"""
        if isinstance(exception, AuctionBaseException):
            return exception.to_dict()

        return {
            "error_code": "UNKNOWN_ERROR",
            "message": str(exception),
            "exception_type": exception.__class__.__name__,
            "details": {}
        }

    @classmethod
    def handle_exception(cls, exception: Exception, context: Dict[str, Any] = None) -> Dict[str, Any]:
        """统一处理异常，返回处理结果"""
        severity = cls.get_exception_severity(exception)

        result = {
            "severity": severity,
            "severity_level": cls.SEVERITY_LEVELS[severity],
            "exit_code": cls.exit_code(exception),
            "exception_info": cls.format_exception_for_logging(exception),
            "context": context or {},
            "handled_at": "auction.exceptions.ExceptionHandler"
        }

        if severity == "CRITICAL":
            result["action"] = "abort_run"
        elif severity == "HIGH":
            result["action"] = "abort_task_keep_partial_results"
        elif severity == "MEDIUM":
            result["action"] = "log_and_fall_back"
        else:
            result["action"] = "log_only"

        return result


# 便捷函数
def handle_exception(exception: Exception, context: Dict[str, Any] = None) -> Dict[str, Any]:
    """便捷异常处理函数"""
    return ExceptionHandler.handle_exception(exception, context)

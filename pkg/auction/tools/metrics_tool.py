"""
运行指标工具
记录LP求解、分支定界与训练轮次的统计信息，可选同步到Prometheus
"""
import time
import threading
from typing import Dict, Any
from collections import Counter, deque
import json
import logging
from pathlib import Path

try:
    from prometheus_client import Counter as PrometheusCounter, Histogram, Gauge, generate_latest
    PROMETHEUS_AVAILABLE = True
except ImportError:
    PROMETHEUS_AVAILABLE = False
    logging.warning("prometheus_client未安装，将使用内置指标收集")


EPOCH_HISTORY = 200


class MetricsTool:
    """求解与训练指标收集"""

    def __init__(self):
        self.start_time = time.time()
        # 最近若干训练轮次的日志行（有界）
        self.recent_epochs = deque(maxlen=EPOCH_HISTORY)
        self.lock = threading.RLock()

        # 内置计数器
        self._lp_solves = Counter()
        self._lp_iterations = 0
        self._bab_status = Counter()
        self._bab_nodes = 0
        self._bab_seconds_total = 0.0
        self._bab_seconds_max = 0.0
        self._epochs = 0
        self._fallbacks = Counter()

        self.prometheus_metrics = {}
        self.prometheus_initialized = False
        self._init_prometheus_metrics()

    def _init_prometheus_metrics(self):
        """初始化Prometheus指标（每个实例独立命名，避免重复注册）"""
        if not PROMETHEUS_AVAILABLE:
            logging.info("Prometheus客户端不可用，使用内置指标")
            return

        try:
            instance_id = id(self)
            self.prometheus_metrics['lp_solves'] = PrometheusCounter(
                f'auction_lp_solves_total_{instance_id}', 'LP solves by status', ['status'])
            self.prometheus_metrics['lp_iterations'] = Histogram(
                f'auction_lp_iterations_{instance_id}', 'Simplex iterations per solve')
            self.prometheus_metrics['bab_nodes'] = Histogram(
                f'auction_bab_nodes_{instance_id}', 'Branch-and-bound nodes per certificate', ['status'])
            self.prometheus_metrics['bab_seconds'] = Histogram(
                f'auction_bab_seconds_{instance_id}', 'Certificate solve time in seconds', ['status'])
            self.prometheus_metrics['train_regret'] = Gauge(
                f'auction_train_regret_{instance_id}', 'Mean empirical regret of the last epoch', ['setting'])
            self.prometheus_metrics['train_revenue'] = Gauge(
                f'auction_train_revenue_{instance_id}', 'Mean revenue of the last epoch', ['setting'])
            self.prometheus_initialized = True
            logging.info("Prometheus指标初始化成功")
        except Exception as e:
            logging.error(f"Prometheus指标初始化失败: {e}")
            self.prometheus_metrics = {}
            self.prometheus_initialized = False

    def record_lp(self, status: str, iterations: int):
        """记录一次LP求解"""
        with self.lock:
            self._lp_solves[status] += 1
            self._lp_iterations += iterations
            if self.prometheus_initialized:
                self.prometheus_metrics['lp_solves'].labels(status=status).inc()
                self.prometheus_metrics['lp_iterations'].observe(iterations)

    def record_bab(self, status: str, nodes: int, seconds: float):
        """记录一次分支定界求解"""
        with self.lock:
            self._bab_status[status] += 1
            self._bab_nodes += nodes
            self._bab_seconds_total += seconds
            self._bab_seconds_max = max(self._bab_seconds_max, seconds)
            if self.prometheus_initialized:
                self.prometheus_metrics['bab_nodes'].labels(status=status).observe(nodes)
                self.prometheus_metrics['bab_seconds'].labels(status=status).observe(seconds)

    def record_fallback(self, kind: str):
        """记录降级处理（如界收紧LP失败回退IBP）"""
        with self.lock:
            self._fallbacks[kind] += 1

    def record_epoch(self, setting: str, row: Dict[str, Any]):
        """记录一个训练轮次的日志行"""
        with self.lock:
            self._epochs += 1
            self.recent_epochs.append({'setting': setting, **row})
            if self.prometheus_initialized:
                self.prometheus_metrics['train_regret'].labels(setting=setting).set(row.get('regret_mean', 0.0))
                self.prometheus_metrics['train_revenue'].labels(setting=setting).set(row.get('revenue', 0.0))

    def get_metrics_summary(self) -> Dict[str, Any]:
        """获取指标摘要（不含时间戳，便于确定性比较）"""
        with self.lock:
            total_lp = sum(self._lp_solves.values())
            return {
                'lp': {
                    'solves': total_lp,
                    'by_status': dict(sorted(self._lp_solves.items())),
                    'avg_iterations': round(self._lp_iterations / max(total_lp, 1), 2),
                },
                'branch_and_bound': {
                    'certificates': sum(self._bab_status.values()),
                    'by_status': dict(sorted(self._bab_status.items())),
                    'nodes': self._bab_nodes,
                    'avg_seconds': round(self._bab_seconds_total / max(sum(self._bab_status.values()), 1), 4),
                    'max_seconds': round(self._bab_seconds_max, 4),
                },
                'training': {'epochs': self._epochs},
                'fallbacks': dict(sorted(self._fallbacks.items())),
            }

    def export_prometheus_metrics(self) -> str:
        """导出Prometheus格式的指标"""
        if not PROMETHEUS_AVAILABLE:
            return "# Prometheus client not available\n"
        try:
            return generate_latest().decode('utf-8')
        except Exception as e:
            logging.error(f"导出Prometheus指标失败: {e}")
            return f"# Error exporting metrics: {e}\n"

    def save_metrics(self, path: str):
        """保存指标摘要到JSON文件"""
        try:
            target = Path(path)
            target.parent.mkdir(parents=True, exist_ok=True)
            with open(target, 'w', encoding='utf-8') as f:
                json.dump(self.get_metrics_summary(), f, indent=2, ensure_ascii=False)
        except Exception as e:
            logging.error(f"保存指标失败: {e}")

    def save_prometheus(self, path: str) -> bool:
        """Prometheus可用时写出文本格式指标，返回是否写出"""
        if not self.prometheus_initialized:
            return False
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(self.export_prometheus_metrics(), encoding='utf-8')
        return True

    def reset(self):
        """清空内置计数（每个实验开始时调用）；Prometheus计数器按其语义保持累计"""
        with self.lock:
            self._lp_solves.clear()
            self._lp_iterations = 0
            self._bab_status.clear()
            self._bab_nodes = 0
            self._bab_seconds_total = 0.0
            self._bab_seconds_max = 0.0
            self._epochs = 0
            self._fallbacks.clear()
            self.recent_epochs.clear()


# 全局指标实例
metrics_tool = MetricsTool()


def record_lp(status: str, iterations: int):
    """便捷的LP记录函数"""
    metrics_tool.record_lp(status, iterations)


def record_bab(status: str, nodes: int, seconds: float):
    """便捷的分支定界记录函数"""
    metrics_tool.record_bab(status, nodes, seconds)


def record_fallback(kind: str):
    metrics_tool.record_fallback(kind)

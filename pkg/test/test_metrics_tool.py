"""
指标工具测试: 汇总统计、有界的轮次历史、清空与Prometheus导出
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from auction.tools.metrics_tool import EPOCH_HISTORY, MetricsTool


class TestMetricsTool(unittest.TestCase):

    def setUp(self):
        self.tool = MetricsTool()

    def test_summary(self):
        self.tool.record_lp("optimal", 10)
        self.tool.record_lp("optimal", 20)
        self.tool.record_lp("infeasible", 3)
        self.tool.record_bab("optimal", 5, 0.5)
        self.tool.record_bab("optimal", 7, 1.5)
        self.tool.record_bab("node_limit", 100, 4.0)
        self.tool.record_fallback("planet_lp")
        summary = self.tool.get_metrics_summary()
        self.assertEqual(summary["lp"], {"solves": 3, "by_status": {"infeasible": 1, "optimal": 2},
                                         "avg_iterations": 11.0})
        bab = summary["branch_and_bound"]
        self.assertEqual(bab["certificates"], 3)
        self.assertEqual(bab["nodes"], 112)
        self.assertAlmostEqual(bab["avg_seconds"], 2.0)
        self.assertAlmostEqual(bab["max_seconds"], 4.0)
        self.assertEqual(summary["fallbacks"], {"planet_lp": 1})

    def test_epoch_history_is_bounded(self):
        total = EPOCH_HISTORY + 50
        for epoch in range(total):
            self.tool.record_epoch("1x2", {"epoch": epoch, "revenue": 0.1, "regret_mean": 0.01})
        self.assertEqual(len(self.tool.recent_epochs), EPOCH_HISTORY)
        self.assertEqual(self.tool.recent_epochs[0]["epoch"], 50)
        self.assertEqual(self.tool.recent_epochs[-1]["setting"], "1x2")
        self.assertEqual(self.tool.get_metrics_summary()["training"]["epochs"], total)

    def test_reset(self):
        self.tool.record_lp("optimal", 4)
        self.tool.record_bab("optimal", 3, 2.0)
        self.tool.record_epoch("1x2", {"epoch": 0})
        self.tool.record_fallback("planet_lp")
        self.tool.reset()
        summary = self.tool.get_metrics_summary()
        self.assertEqual(summary["lp"]["solves"], 0)
        self.assertEqual(summary["branch_and_bound"],
                         {"certificates": 0, "by_status": {}, "nodes": 0, "avg_seconds": 0.0, "max_seconds": 0.0})
        self.assertEqual(summary["training"]["epochs"], 0)
        self.assertEqual(summary["fallbacks"], {})
        self.assertEqual(len(self.tool.recent_epochs), 0)

    def test_prometheus_export(self):
        self.tool.record_lp("optimal", 4)
        text = self.tool.export_prometheus_metrics()
        self.assertIsInstance(text, str)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "metrics.prom"
            written = self.tool.save_prometheus(str(path))
            self.assertEqual(written, self.tool.prometheus_initialized)
            self.assertEqual(path.exists(), written)
            if written:
                self.assertIn(f"auction_lp_solves_total_{id(self.tool)}", path.read_text(encoding="utf-8"))

    def test_save_metrics(self):
        self.tool.record_bab("optimal", 1, 0.25)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "nested" / "metrics.json"
            self.tool.save_metrics(str(path))
            self.assertIn('"certificates": 1', path.read_text(encoding="utf-8"))


if __name__ == "__main__":
    unittest.main()

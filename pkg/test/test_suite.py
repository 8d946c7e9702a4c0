"""
实验套件测试: 小规模实验的输出文件、模型复用与合并汇总
"""

import json
import os
import sys
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from auction.config.unified_config import ExperimentSpec
from auction.experiments.suite import run_all, run_suite
from auction.tools.model_store import load_model, read_csv
from auction.tools.report_tool import SUMMARY_COLUMNS

TIME_COLUMNS = ["solve_time_mean", "solve_time_std"]


def tiny_spec(**overrides) -> ExperimentSpec:
    spec = ExperimentSpec(
        name="tiny_penalty_free",
        auction={"n_agents": 1, "n_items": 2, "trunk_widths": [4], "ir_mode": "penalty_free"},
        relu_reg=True,
        distill=True,
        clip_payments=True,
        train={"batch_size": 20, "epochs": 2, "train_count": 40, "misreport_steps_train": 2,
               "misreport_steps_eval": 5, "stability_weight": 0.01, "seed": 4},
        certify={"tolerance": 1e-4, "node_limit": 500, "empirical_steps": 5},
        certify_points=2,
        evaluate_points=10,
        test_seed=2,
    )
    return replace(spec, **overrides) if overrides else spec


class TestRunSuite(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.out = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def test_outputs(self):
        summary = run_suite(tiny_spec(), self.out)
        self.assertEqual(list(summary.columns), SUMMARY_COLUMNS)
        self.assertEqual(len(summary), 1)
        row = summary.iloc[0]
        self.assertEqual((row["ir"], row["relu_reg"], row["clipped"], row["distilled"]), ("No", "Yes", "Yes", "Yes"))
        self.assertEqual((row["points_evaluated"], row["points_certified"]), (10, 2))
        self.assertAlmostEqual(row["myerson_baseline"], 0.5)

        folder = Path(self.out) / "tiny_penalty_free"
        for name in ("model.json", "train_log.csv", "teacher_log.csv", "evaluation.csv", "ir_violation.csv",
                     "certificates.csv", "misreport_points.csv", "runtime_points.csv", "summary.csv",
                     "tiny_penalty_free.manifest.json"):
            self.assertTrue((folder / name).exists(), name)
        self.assertTrue(load_model(str(folder / "model.json")).clip_payments)

        misreports, manifest = read_csv(str(folder / "misreport_points.csv"))
        self.assertEqual(manifest, "tiny_penalty_free.manifest.json")
        self.assertEqual(list(misreports.columns),
                         ["profile_id", "agent", "truthful_bid", "incumbent_misreport", "certified_regret"])

    def test_existing_model_is_reused(self):
        metrics_file = Path(self.out) / "tiny_penalty_free" / "metrics.json"
        first = run_suite(tiny_spec(), self.out)
        first_metrics = json.loads(metrics_file.read_text(encoding="utf-8"))
        second = run_suite(tiny_spec(), self.out)
        second_metrics = json.loads(metrics_file.read_text(encoding="utf-8"))
        self.assertTrue(first.drop(columns=TIME_COLUMNS).equals(second.drop(columns=TIME_COLUMNS)))
        # 每个实验开始时清空计数：复用模型的第二次运行没有训练轮次
        self.assertGreater(first_metrics["training"]["epochs"], 0)
        self.assertEqual(second_metrics["training"]["epochs"], 0)
        self.assertEqual(second_metrics["branch_and_bound"]["certificates"],
                         first_metrics["branch_and_bound"]["certificates"])

    def test_disabled_and_combined(self):
        self.assertEqual(len(run_suite(tiny_spec(enabled=False), self.out)), 0)
        summary = run_all([tiny_spec(), tiny_spec(name="tiny_off", enabled=False)], self.out)
        self.assertEqual(summary["experiment"].tolist(), ["tiny_penalty_free"])
        combined, _ = read_csv(str(Path(self.out) / "summary.csv"))
        self.assertEqual(len(combined), 1)


if __name__ == "__main__":
    unittest.main()

"""
命令行测试: 各子命令在临时目录中的小规模运行、退出码与输出文件
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path

import yaml

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from auction.config.unified_config import AuctionConfig
from auction.models.auction_net import zero_net
from auction.main import main
from auction.training.trainer import LOG_COLUMNS
from auction.verification.certifier import CERTIFICATE_COLUMNS
from auction.tools.model_store import load_model, read_csv, save_model

FIXTURE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures", "results_published.csv")

SMALL_CONFIG = {
    "auction": {"n_agents": 1, "n_items": 2, "trunk_widths": [4], "ir_mode": "fractional"},
    "train": {"batch_size": 20, "epochs": 2, "train_count": 40, "misreport_steps_train": 2,
              "misreport_steps_eval": 5, "stability_weight": 0.01, "seed": 3},
    "certify": {"tolerance": 1e-3, "node_limit": 200, "empirical_steps": 5, "residual_check": False},
    "system": {"deterministic": True},
}


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.config = str(self.tmp / "config.yaml")
        with open(self.config, "w", encoding="utf-8") as f:
            yaml.safe_dump(SMALL_CONFIG, f)

    def tearDown(self):
        self._tmp.cleanup()

    def path(self, name: str) -> str:
        return str(self.tmp / name)


class TestArguments(CliTestCase):

    def test_usage_errors_return_2(self):
        self.assertEqual(main([]), 2)
        self.assertEqual(main(["gen-data", "--n", "1"]), 2)
        self.assertEqual(main(["certify", "--model", "m.json", "--bogus"]), 2)
        self.assertEqual(main(["certify", "--model", "m.json", "--bound-method", "exact"]), 2)

    def test_missing_model_returns_1(self):
        self.assertEqual(main(["evaluate", "--model", self.path("missing.json"), "--config", self.config]), 1)

    def test_corrupt_model_returns_1(self):
        Path(self.path("bad.json")).write_text("{\"format\": \"auction-net\", \"version\": 1", encoding="utf-8")
        self.assertEqual(main(["certify", "--model", self.path("bad.json"), "--config", self.config]), 1)

    def test_bad_config_value_returns_2(self):
        with open(self.config, "w", encoding="utf-8") as f:
            yaml.safe_dump({"certify": {"complementarity": "sos1"}}, f)
        self.assertEqual(main(["evaluate", "--model", self.path("m.json"), "--config", self.config]), 2)


class TestGenData(CliTestCase):

    def test_same_seed_same_bytes(self):
        args = ["gen-data", "--n", "2", "--k", "2", "--count", "30", "--seed", "7"]
        self.assertEqual(main(args + ["--out", self.path("a.json")]), 0)
        self.assertEqual(main(args + ["--out", self.path("b.json")]), 0)
        self.assertEqual(Path(self.path("a.json")).read_bytes(), Path(self.path("b.json")).read_bytes())
        self.assertTrue(Path(self.path("a.manifest.json")).exists())

    def test_dataset_mismatch_returns_2(self):
        main(["gen-data", "--n", "2", "--k", "2", "--count", "5", "--seed", "1", "--out", self.path("d.json")])
        save_model(zero_net(AuctionConfig(trunk_widths=[4])), self.path("m.json"))
        code = main(["evaluate", "--model", self.path("m.json"), "--config", self.config,
                     "--data", self.path("d.json")])
        self.assertEqual(code, 2)


class TestPipeline(CliTestCase):

    def test_evaluate_zero_model(self):
        save_model(zero_net(AuctionConfig(trunk_widths=[4], ir_mode="penalty_free")), self.path("zero.json"))
        code = main(["evaluate", "--model", self.path("zero.json"), "--config", self.config, "--count", "20",
                     "--steps", "5", "--ir-report", "--out", self.path("evaluation.csv")])
        self.assertEqual(code, 0)
        summary, manifest = read_csv(self.path("evaluation_summary.csv"))
        self.assertEqual(manifest, "evaluation.manifest.json")
        self.assertEqual(summary.loc[0, "revenue_mean"], 0.0)
        self.assertEqual(summary.loc[0, "regret_max"], 0.0)
        self.assertEqual(summary.loc[0, "ir_violation_rate"], 0.0)
        points, _ = read_csv(self.path("evaluation.csv"))
        self.assertEqual(len(points), 20)

    def test_train_then_certify(self):
        model = self.path("model.json")
        self.assertEqual(main(["train", "--config", self.config, "--relu-reg", "--out", model]), 0)
        net = load_model(model)
        self.assertEqual(net.config.trunk_widths, [4])
        log, _ = read_csv(self.path("model_log.csv"))
        self.assertEqual(list(log.columns), LOG_COLUMNS)
        self.assertEqual(len(log), 2)

        out = self.path("certificates.csv")
        code = main(["certify", "--model", model, "--config", self.config, "--count", "2", "--seed", "5",
                     "--out", out])
        self.assertEqual(code, 0)
        certs, manifest = read_csv(out)
        self.assertEqual(manifest, "certificates.manifest.json")
        self.assertEqual(list(certs.columns), CERTIFICATE_COLUMNS)
        self.assertEqual(certs["profile_id"].tolist(), [0, 1])
        self.assertTrue((certs["certified_regret"] >= certs["empirical_regret"] - 1e-6).all())

    def test_distill_with_clip(self):
        teacher = self.path("teacher.json")
        save_model(zero_net(AuctionConfig(trunk_widths=[4])), teacher)
        student = self.path("student.json")
        code = main(["distill", "--config", self.config, "--teacher", teacher, "--clip", "--epochs", "1",
                     "--out", student])
        self.assertEqual(code, 0)
        net = load_model(student)
        self.assertTrue(net.clip_payments)
        self.assertEqual(net.config.ir_mode.value, "penalty_free")
        self.assertTrue(net.provenance["distilled"])

    def test_report_over_published_rows(self):
        code = main(["report", "--inputs", FIXTURE, "--out", self.path("report")])
        self.assertEqual(code, 0)
        table, _ = read_csv(self.path("report/results_table.csv"))
        self.assertEqual(table.loc[1, "Revenue"], "0.569 (0.390)")
        self.assertEqual(table.loc[4, "Auction Setting"], "2x2 (2nd)")


if __name__ == "__main__":
    unittest.main()

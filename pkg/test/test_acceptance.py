"""
桌面规模验收测试（耗时，AUCTION_RUN_SLOW=1 时运行）
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from auction.config.unified_config import load_experiment_spec
from auction.experiments.suite import run_suite
from auction.tools.model_store import read_csv

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
RUN_SLOW = os.getenv("AUCTION_RUN_SLOW", "0") == "1"


def spec(name: str):
    return load_experiment_spec(os.path.join(ROOT, "config", "experiments", f"{name}.yaml"))


@unittest.skipUnless(RUN_SLOW, "set AUCTION_RUN_SLOW=1 to run desk-scale experiments")
class TestDeskScale(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.out = cls._tmp.name
        cls.results = {}

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def run_experiment(self, name: str):
        if name not in self.results:
            self.results[name] = run_suite(spec(name), self.out, deterministic=True, retrain=True)
        return self.results[name]

    def certificates(self, name: str):
        frame, _ = read_csv(str(Path(self.out) / name / "certificates.csv"))
        return frame

    def test_fractional_beats_item_wise_baseline(self):
        row = self.run_experiment("1x2_fractional_reg").iloc[0]
        self.assertGreater(row["revenue_mean"], row["myerson_baseline"])
        self.assertLess(row["certified_regret_mean"], 0.05)
        self.assertLess(row["max_residual"], 1e-5)

    def test_certified_regret_dominates_pgd(self):
        self.run_experiment("1x2_fractional_reg")
        certs = self.certificates("1x2_fractional_reg")
        self.assertTrue((certs["certified_regret"] >= certs["empirical_regret"] - 1e-6).all())

    def test_penalty_pipeline_ir(self):
        self.run_experiment("1x2_penalty_free_reg")
        report, _ = read_csv(str(Path(self.out) / "1x2_penalty_free_reg" / "ir_violation.csv"))
        row = report.iloc[0]
        self.assertLess(row["violation_rate"], 0.10)
        self.assertLess(row["violation_mean"], 0.01)
        self.assertLess(row["revenue_drop"], 0.02)

    def test_stability_regularizer_reduces_unstable_relus(self):
        regularized = self.run_experiment("1x2_fractional_reg").iloc[0]
        plain = self.run_experiment("1x2_fractional").iloc[0]
        self.assertLess(regularized["unstable_relus_mean"], plain["unstable_relus_mean"])


if __name__ == "__main__":
    unittest.main()

"""
实验套件 - 桌面规模复现主结果表的各行与扩展实验

每个实验: 训练（或读取已有模型）→ 测试集评估 → 认证点集 → 汇总行 +
逐点文件（真实出价与最优误报；遗憾与求解时间）。
所有输出都写在 <output_dir>/<实验名>/ 下，并附运行清单。
"""

import logging
import os
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from auction.config.unified_config import ExperimentSpec, IRMode
from auction.models.auction_net import AuctionNet
from auction.training.dataset import Dataset, generate_dataset
from auction.training.evaluation import clip_payments, evaluate, ir_violation_report, myerson_baseline
from auction.training.trainer import AuctionTrainer, teacher_config
from auction.verification.certifier import Certificate, certificates_frame, certify_batch
from auction.tools.metrics_tool import metrics_tool
from auction.tools.model_store import (
    RunManifest, load_model, manifest_path_for, save_model, write_csv,
)
from auction.tools.report_tool import SUMMARY_COLUMNS, summarize
from auction.exceptions import AuctionBaseException

MISREPORT_POINT_COLUMNS = ["profile_id", "agent", "truthful_bid", "incumbent_misreport", "certified_regret"]
RUNTIME_POINT_COLUMNS = ["profile_id", "agent", "certified_regret", "empirical_regret", "seconds", "nodes"]

# 认证点与评估点使用不同的种子
CERTIFY_SEED_OFFSET = 1000


class ExperimentRunner:
    """单个实验的执行器"""

    def __init__(self, spec: ExperimentSpec, output_dir: str, deterministic: bool = True,
                 retrain: bool = False):
        self.spec = spec
        self.output_dir = Path(output_dir) / spec.name
        self.deterministic = deterministic
        self.retrain = retrain
        self.manifest = RunManifest(
            command="run_suite",
            config=spec.to_dict(),
            seed=spec.train.seed,
            notes={"desk_scale": self.desk_scale},
        )

    @property
    def desk_scale(self) -> str:
        s = self.spec
        return (f"train_count={s.train.train_count} epochs={s.train.epochs} "
                f"evaluate_points={s.evaluate_points} certify_points={s.certify_points}")

    def _path(self, name: str) -> str:
        return str(self.output_dir / name)

    def _write(self, frame: pd.DataFrame, name: str):
        path = self._path(name)
        write_csv(frame, path, self._manifest_file)
        if path not in self.manifest.outputs:
            self.manifest.outputs.append(path)

    @property
    def _manifest_file(self) -> str:
        return self._path(f"{self.spec.name}.manifest.json")

    # ---------- 训练 ----------

    def _train(self, dataset: Dataset) -> AuctionNet:
        s = self.spec
        teacher = None
        if s.distill:
            # 教师: 同规模的 softmax/sigmoid 网络，不加稳定性正则
            teacher_train = replace(s.train, stability_weight=0.0)
            logging.info(f"[{s.name}] 训练蒸馏教师")
            teacher, teacher_log = AuctionTrainer(
                teacher_config(s.auction), teacher_train, relu_reg=False,
                deterministic=self.deterministic).train(dataset)
            self._write(teacher_log.to_frame(), "teacher_log.csv")

        net, log = AuctionTrainer(s.auction, s.train, relu_reg=s.relu_reg, teacher=teacher,
                                  deterministic=self.deterministic).train(dataset)
        self._write(log.to_frame(), "train_log.csv")
        if s.clip_payments and s.auction.ir_mode is IRMode.PENALTY_FREE:
            net = clip_payments(net)
        return net

    def model(self) -> AuctionNet:
        s = self.spec
        model_path = s.model_path or self._path("model.json")
        if not self.retrain and os.path.exists(model_path):
            logging.info(f"[{s.name}] 读取已有模型 {model_path}")
            self.manifest.inputs.append(model_path)
            return load_model(model_path)
        dataset = generate_dataset(s.auction.n_agents, s.auction.n_items, s.train.train_count, s.train.seed)
        net = self._train(dataset)
        save_model(net, model_path)
        self.manifest.outputs.append(model_path)
        return net

    # ---------- 执行 ----------

    def run(self) -> pd.DataFrame:
        s = self.spec
        n, k = s.auction.n_agents, s.auction.n_items
        self.output_dir.mkdir(parents=True, exist_ok=True)
        metrics_tool.reset()
        logging.info(f"[{s.name}] 开始实验 {s.auction.setting} ({s.auction.ir_mode.value})，{self.desk_scale}")

        certificates: List[Certificate] = []
        try:
            net = self.model()

            eval_profiles = generate_dataset(n, k, s.evaluate_points, s.test_seed).profiles
            evaluation = evaluate(net, eval_profiles, s.train.misreport_steps_eval, s.train.misreport_lr)
            self._write(evaluation.points, "evaluation.csv")

            ir_report: Optional[Dict[str, Any]] = None
            if s.auction.ir_mode is IRMode.PENALTY_FREE:
                ir_report = ir_violation_report(net, eval_profiles)
                self._write(pd.DataFrame([ir_report]), "ir_violation.csv")

            cert_profiles = generate_dataset(n, k, s.certify_points, s.test_seed + CERTIFY_SEED_OFFSET).profiles
            certify_batch(net, cert_profiles, config=s.certify, deterministic=self.deterministic,
                          results=certificates)
        except AuctionBaseException:
            self._save_partial(certificates)
            raise

        points = certificates_frame(certificates)
        self._write(points, "certificates.csv")
        self._write(points[MISREPORT_POINT_COLUMNS], "misreport_points.csv")
        self._write(points[RUNTIME_POINT_COLUMNS], "runtime_points.csv")

        meta = {
            "name": s.name,
            "setting": s.auction.setting,
            "ir": s.auction.ir_mode is IRMode.FRACTIONAL,
            "relu_reg": s.relu_reg,
            "clipped": net.clip_payments,
            "distilled": bool(net.provenance.get("distilled", s.distill)),
            "myerson_baseline": myerson_baseline(n, k),
            "desk_scale": self.desk_scale,
            "published_reference": s.published_reference,
        }
        summary = summarize(meta, evaluation.points, points)
        self._write(summary, "summary.csv")
        metrics_tool.save_metrics(self._path("metrics.json"))
        metrics_tool.save_prometheus(self._path("metrics.prom"))
        self.manifest.save(self._manifest_file)

        row = summary.iloc[0]
        logging.info(f"[{s.name}] 完成: 收益 {row['revenue_mean']:.4f} (基线 {meta['myerson_baseline']:.4f})，"
                     f"经验遗憾 {row['empirical_regret_mean']:.5f}，认证遗憾 {row['certified_regret_mean']:.5f}")
        if ir_report is not None:
            logging.info(f"[{s.name}] IR违反 {ir_report['violation_rate']:.2%}，"
                         f"裁剪后收益下降 {ir_report['revenue_drop']:.2%}")
        return summary

    def _save_partial(self, certificates: List[Certificate]):
        if certificates:
            self._write(certificates_frame(certificates), "certificates.partial.csv")
        self.manifest.notes["partial"] = True
        self.manifest.save(self._manifest_file)
        logging.error(f"[{self.spec.name}] 实验中断，已保存 {len(certificates)} 个证书")


def run_suite(spec: ExperimentSpec, output_dir: str = "data/outputs", deterministic: bool = True,
              retrain: bool = False) -> pd.DataFrame:
    """运行一个实验，返回其汇总行（并写入 summary.csv）"""
    if not spec.enabled:
        logging.info(f"实验 {spec.name} 默认关闭，跳过")
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    return ExperimentRunner(spec, output_dir, deterministic, retrain).run()


def run_all(specs: List[ExperimentSpec], output_dir: str = "data/outputs", deterministic: bool = True,
            retrain: bool = False) -> pd.DataFrame:
    """顺序运行多个实验并合并汇总；总表也写入 output_dir/summary.csv"""
    frames = [run_suite(spec, output_dir, deterministic, retrain) for spec in specs]
    frames = [f for f in frames if len(f)]
    summary = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=SUMMARY_COLUMNS)
    manifest = RunManifest(command="run_all", config={"experiments": [s.name for s in specs]},
                           seed=0, outputs=[str(Path(output_dir) / "summary.csv")])
    manifest_file = manifest.save(manifest_path_for(str(Path(output_dir) / "summary.csv")))
    write_csv(summary, str(Path(output_dir) / "summary.csv"), manifest_file)
    return summary

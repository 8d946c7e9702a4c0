"""
报告工具 - 把逐点CSV汇总成表格
- 汇总行: 每个实验每个买家一行（均值与标准差），第二个买家的行不报告收益
- 主结果表: 设置 / IR / ReLU正则 / 求解时间 / 收益 / 经验遗憾 / 认证遗憾 / 比值
- IR违反表与扩展实验表
"""

import logging
import math
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from auction.exceptions import InvalidConfigurationError

SUMMARY_COLUMNS = [
    "experiment", "setting", "agent", "ir", "relu_reg", "clipped", "distilled",
    "points_evaluated", "points_certified",
    "solve_time_mean", "solve_time_std", "revenue_mean", "revenue_std",
    "empirical_regret_mean", "empirical_regret_std", "certified_regret_mean", "certified_regret_std",
    "ratio", "ratio_certified_points", "max_gap", "max_residual", "incomplete",
    "unstable_relus_mean", "myerson_baseline", "desk_scale",
    "published_solve_time", "published_revenue", "published_empirical_regret", "published_certified_regret", "published_ratio",
]

RESULTS_TABLE_COLUMNS = [
    "Auction Setting", "IR", "Relu Reg.", "Solve time (s)", "Revenue",
    "Empirical Regret", "Certified Regret", "Emp./Cert. Regret",
]

IR_TABLE_COLUMNS = [
    "Auction Setting", "% of IR violation", "Max IR violation", "Mean IR violation",
    "Revenue before enforcing IR", "Revenue after enforcing IR",
]

SCALING_COLUMNS = ["Auction setting", "Clipped", "Mean solve time (s)", "Regret"]

MISSING = "---"


def _std(values: pd.Series) -> float:
    # 总体标准差（ddof=0），与 numpy 默认一致
    return float(np.std(values.to_numpy(dtype=np.float64))) if len(values) else math.nan


def _mean(values: pd.Series) -> float:
    return float(values.astype(np.float64).mean()) if len(values) else math.nan


def _yes_no(flag) -> str:
    return "Yes" if bool(flag) else "No"


def summarize(meta: Dict[str, Any], evaluation: pd.DataFrame, certificates: pd.DataFrame) -> pd.DataFrame:
    """逐点明细 → 每个买家一行汇总；均值就是逐点文件的算术平均"""
    rows = []
    reference = dict(meta.get("published_reference") or {})
    revenue_per_profile = evaluation.drop_duplicates("profile_id")["revenue"] if len(evaluation) else pd.Series([], dtype=float)
    agents = sorted(set(certificates["agent"]).union(evaluation["agent"])) if len(certificates) or len(evaluation) else [0]

    for agent in agents:
        ev = evaluation[evaluation["agent"] == agent]
        ce = certificates[certificates["agent"] == agent]
        empirical_mean, certified_mean = _mean(ev["empirical_regret"]), _mean(ce["certified_regret"])
        cert_emp_mean = _mean(ce["empirical_regret"]) if "empirical_regret" in ce else math.nan
        ref = reference if agent == 0 else dict(reference.get("second_agent") or {})
        rows.append({
            "experiment": meta.get("name", ""),
            "setting": meta.get("setting", ""),
            "agent": int(agent),
            "ir": _yes_no(meta.get("ir")),
            "relu_reg": _yes_no(meta.get("relu_reg")),
            "clipped": _yes_no(meta.get("clipped")),
            "distilled": _yes_no(meta.get("distilled")),
            "points_evaluated": int(ev["profile_id"].nunique()),
            "points_certified": int(ce["profile_id"].nunique()),
            "solve_time_mean": _mean(ce["seconds"]),
            "solve_time_std": _std(ce["seconds"]),
            "revenue_mean": _mean(revenue_per_profile) if agent == 0 else math.nan,
            "revenue_std": _std(revenue_per_profile) if agent == 0 else math.nan,
            "empirical_regret_mean": empirical_mean,
            "empirical_regret_std": _std(ev["empirical_regret"]),
            "certified_regret_mean": certified_mean,
            "certified_regret_std": _std(ce["certified_regret"]),
            "ratio": empirical_mean / certified_mean if certified_mean > 0 else math.nan,
            "ratio_certified_points": cert_emp_mean / certified_mean if certified_mean > 0 else math.nan,
            "max_gap": float(ce["gap"].max()) if len(ce) else math.nan,
            "max_residual": float(ce["residual"].max()) if len(ce) else math.nan,
            "incomplete": int((ce["status"] != "optimal").sum()) if len(ce) else 0,
            "unstable_relus_mean": _mean(ce["unstable_relus"]) if "unstable_relus" in ce else math.nan,
            "myerson_baseline": meta.get("myerson_baseline", math.nan),
            "desk_scale": meta.get("desk_scale", ""),
            "published_solve_time": ref.get("solve_time", math.nan),
            "published_revenue": ref.get("revenue", math.nan),
            "published_empirical_regret": ref.get("empirical_regret", math.nan),
            "published_certified_regret": ref.get("certified_regret", math.nan),
            "published_ratio": ref.get("ratio", math.nan),
        })
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def format_cell(mean: float, std: Optional[float] = None, digits: int = 3) -> str:
    """'0.569 (0.390)' 形式；均值缺失时为 '---'"""
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return MISSING
    text = f"{mean:.{digits}f}"
    if std is not None and not (isinstance(std, float) and math.isnan(std)):
        text += f" ({std:.{digits}f})"
    return text


def results_table(summary: pd.DataFrame) -> pd.DataFrame:
    """汇总行 → 主结果表（第二个买家标注为 (2nd)）"""
    rows = []
    for _, r in summary.iterrows():
        setting = r["setting"] if int(r["agent"]) == 0 else f"{r['setting']} (2nd)"
        rows.append({
            "Auction Setting": setting,
            "IR": r["ir"],
            "Relu Reg.": r["relu_reg"],
            "Solve time (s)": format_cell(r["solve_time_mean"], r["solve_time_std"]),
            "Revenue": format_cell(r["revenue_mean"], r["revenue_std"]),
            "Empirical Regret": format_cell(r["empirical_regret_mean"], r["empirical_regret_std"]),
            "Certified Regret": format_cell(r["certified_regret_mean"], r["certified_regret_std"]),
            "Emp./Cert. Regret": format_cell(r["ratio"]),
        })
    return pd.DataFrame(rows, columns=RESULTS_TABLE_COLUMNS)


def ir_table(reports: Iterable[Dict[str, Any]]) -> pd.DataFrame:
    """IR违反统计表"""
    rows = []
    for rep in reports:
        rows.append({
            "Auction Setting": rep["setting"],
            "% of IR violation": f"{100.0 * rep['violation_rate']:.2f}%",
            "Max IR violation": f"{rep['violation_max']:.4f}",
            "Mean IR violation": format_cell(rep["violation_mean"], rep["violation_std"], digits=4),
            "Revenue before enforcing IR": f"{rep['revenue_unclipped']:.4f}",
            "Revenue after enforcing IR": f"{rep['revenue_clipped']:.4f}",
        })
    return pd.DataFrame(rows, columns=IR_TABLE_COLUMNS)


def scaling_table(summary: pd.DataFrame) -> pd.DataFrame:
    """扩展实验：求解时间与认证遗憾"""
    rows = []
    for _, r in summary[summary["agent"] == 0].iterrows():
        rows.append({
            "Auction setting": r["setting"],
            "Clipped": r["clipped"],
            "Mean solve time (s)": format_cell(r["solve_time_mean"], r["solve_time_std"]),
            "Regret": format_cell(r["certified_regret_mean"], r["certified_regret_std"]),
        })
    return pd.DataFrame(rows, columns=SCALING_COLUMNS)


def combine_summaries(frames: List[pd.DataFrame]) -> pd.DataFrame:
    frames = [f for f in frames if len(f)]
    if not frames:
        return pd.DataFrame(columns=SUMMARY_COLUMNS)
    combined = pd.concat(frames, ignore_index=True)
    missing = [c for c in ("setting", "agent", "ir", "relu_reg") if c not in combined]
    if missing:
        raise InvalidConfigurationError("summary", missing, "summary CSV lacks required columns")
    return combined


def build_report(summary: pd.DataFrame, ir_reports: Iterable[Dict[str, Any]] = ()) -> Dict[str, pd.DataFrame]:
    """生成全部表格"""
    table_settings = summary["setting"].isin(["1x2", "2x2"])
    tables = {"results_table": results_table(summary[table_settings])}
    if (~table_settings).any():
        tables["scaling"] = scaling_table(summary[~table_settings])
    ir_reports = list(ir_reports)
    if ir_reports:
        tables["ir_violation"] = ir_table(ir_reports)
    logging.info(f"报告生成完成: {', '.join(tables)}")
    return tables

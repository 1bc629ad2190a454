"""
Report directory writer.

Everything except timing.csv is a function of the configuration and seeds.

Layout::

    <out_dir>/report.csv      arm, seed, metric, value
    <out_dir>/summary.csv     arm, metric, median, failed
    <out_dir>/config.yaml     snapshot, seeds, checks and notes
    <out_dir>/timing.csv      name, wall_time_seconds
    <out_dir>/traces/*.csv    per-arm loss traces
    <out_dir>/*.svg           figures
"""

from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd
import yaml

from src.data.models import ExperimentReport, LossBreakdown
from src.flow.training import write_trace
from src.utils.logging import get_logger
from src.utils.svg import write_svg

logger = get_logger(__name__)

FLOAT_FORMAT = "%.17g"


def report_frame(report: ExperimentReport) -> pd.DataFrame:
    return pd.DataFrame(
        [row.model_dump() for row in report.rows], columns=["arm", "seed", "metric", "value"]
    )


def summary_frame(report: ExperimentReport) -> pd.DataFrame:
    rows = [
        {"arm": arm, "metric": metric, "median": value, "failed": arm in report.failed_arms}
        for arm, metrics in report.arms.items()
        for metric, value in metrics.items()
    ]
    return pd.DataFrame(rows, columns=["arm", "metric", "median", "failed"])


def timing_frame(report: ExperimentReport) -> pd.DataFrame:
    return pd.DataFrame([{"name": report.name, "wall_time_seconds": round(report.wall_time, 3)}])


def snapshot_document(report: ExperimentReport) -> Dict[str, object]:
    return {
        "name": report.name,
        "config": report.config,
        "seeds": report.seeds,
        "checks": report.checks,
        "notes": report.notes,
        "failed_arms": report.failed_arms,
    }


def write_report(
    report: ExperimentReport,
    out_dir: Union[str, Path],
    traces: Optional[Dict[str, List[LossBreakdown]]] = None,
    figures: Optional[Dict[str, str]] = None,
) -> Path:
    """Write the report directory and return its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    report_frame(report).to_csv(out / "report.csv", index=False, float_format=FLOAT_FORMAT)
    summary_frame(report).to_csv(out / "summary.csv", index=False, float_format=FLOAT_FORMAT)
    with open(out / "config.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(snapshot_document(report), fh, sort_keys=False)
    timing_frame(report).to_csv(out / "timing.csv", index=False)

    for name, trace in (traces or {}).items():
        write_trace(trace, out / "traces" / f"{name}.csv")
    for name, svg in (figures or {}).items():
        write_svg(svg, out / f"{name}.svg")

    logger.info(f"Report '{report.name}' written to {out} ({len(report.rows)} rows)")
    return out

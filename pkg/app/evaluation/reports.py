from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Dict, Optional

import pandas as pd
from loguru import logger

from app.models.metrics import DetCurve, MetricsReport
from app.utils.error import writing

QUANTUM = Decimal("0.0001")


def fmt_rate(value: float) -> str:
    """Four decimals, ties to even on the decimal representation."""
    return str(Decimal(repr(value)).quantize(QUANTUM, rounding=ROUND_HALF_EVEN))


def text_table(report: MetricsReport) -> str:
    rows = [("threshold", f"{report.threshold:.6f}")]
    if report.threshold_source is not None:
        rows.append(("threshold chosen on", report.threshold_source))
    rows.append(("APCER (pooled)", fmt_rate(report.apcer_overall)))
    rows += [(f"APCER [{tag}]", fmt_rate(rate)) for tag, rate in report.apcer_per_pai.items()]
    rows += [
        ("APCER (worst PAI)", fmt_rate(report.apcer_worst_pai)),
        ("BPCER", fmt_rate(report.bpcer)),
        ("ACER", fmt_rate(report.acer)),
    ]
    if report.eer is not None:
        rows.append(("EER", fmt_rate(report.eer)))
    if report.auc is not None:
        rows.append(("ROC AUC", f"{report.auc:.4f}"))
    rows += [(f"count {key}", str(count)) for key, count in report.counts.items()]
    width = max(len(name) for name, _ in rows)
    value_width = max(len(value) for _, value in rows)
    table = "\n".join(f"{name:<{width}}  {value:>{value_width}}" for name, value in rows) + "\n"
    if report.threshold_source == "evaluated set":
        table += "note: threshold chosen on the scored set itself, so the error rates above are optimistic\n"
    return table


def det_frame(curve: DetCurve) -> pd.DataFrame:
    return pd.DataFrame([p.model_dump() for p in curve.points], columns=["threshold", "apcer", "bpcer"])


def write_report(
    report: MetricsReport, out_dir: Path, curve: Optional[DetCurve] = None, name: str = "report"
) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {"json": out_dir / f"{name}.json", "text": out_dir / f"{name}.txt"}
    with writing(out_dir):
        out_dir.mkdir(parents=True, exist_ok=True)
        paths["json"].write_text(report.model_dump_json(indent=2))
        paths["text"].write_text(text_table(report))
        if curve is not None:
            paths["det"] = out_dir / f"{name}_det.csv"
            det_frame(curve).to_csv(paths["det"], index=False)
    logger.info(f"Wrote {', '.join(sorted(paths))} report files to {out_dir}")
    return paths

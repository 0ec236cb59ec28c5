import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
import plotly.graph_objs as go
from PIL import Image as PILImage

from config import Config
from utils.finetune import FinetuneResult
from utils.imaging import render_diff_visualization, save_image, to_uint8
from utils.metrics import Calibration, roc_curve
from utils.models import DetectionResult, EvalReport, ReconstructionQuad


def write_json(data: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
    return path


def contact_sheet(quad: ReconstructionQuad) -> PILImage.Image:
    """2x2 grid: columns are the identity source (ref, test), rows the attribute source (ref, test)."""
    h, w = quad.i_rr.size
    sheet = PILImage.new("RGB", (2 * w, 2 * h))
    for image, (row, col) in ((quad.i_rr, (0, 0)), (quad.i_tr, (0, 1)), (quad.i_rt, (1, 0)), (quad.i_tt, (1, 1))):
        sheet.paste(PILImage.fromarray(to_uint8(image.pixels)), (col * w, row * h))
    return sheet


def write_detection(result: DetectionResult, out_dir: str | Path, gain: float = Config.DEFAULT_GAIN) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {
        "diff_ref": save_image(render_diff_visualization(result.diff_ref, gain), out_dir / "diff_ref.png"),
        "diff_test": save_image(render_diff_visualization(result.diff_test, gain), out_dir / "diff_test.png"),
        "diff_recon": save_image(render_diff_visualization(result.diff_recon, gain), out_dir / "diff_recon.png"),
    }
    sheet_path = out_dir / "quad.png"
    contact_sheet(result.quad).save(sheet_path)
    artifacts["quad"] = sheet_path
    record = result.to_record({name: str(path) for name, path in artifacts.items()})
    write_json(record, out_dir / "result.json")
    return record


# ====================================================================
# Evaluation
# ====================================================================

def roc_figure(report: EvalReport) -> go.Figure:
    fig = go.Figure()
    if report.real_scores and report.fake_scores:
        fpr, tpr = roc_curve(report.real_scores, report.fake_scores)
        fig.add_trace(go.Scatter(x=fpr, y=tpr, mode="lines", name=f"metric (AUC {report.auc:.3f})"))
    fig.add_trace(go.Scatter(x=[0, 1], y=[0, 1], mode="lines", line=dict(dash="dash"), name="chance"))
    fig.update_layout(title="ROC curve (fake = positive)", xaxis_title="False positive rate",
                      yaxis_title="True positive rate")
    return fig


def distribution_figure(real_scores: list[float], fake_scores: list[float],
                        calibration: Calibration | None = None) -> go.Figure:
    fig = go.Figure()
    fig.add_trace(go.Histogram(x=real_scores, name="real", opacity=0.6))
    fig.add_trace(go.Histogram(x=fake_scores, name="fake", opacity=0.6))
    if calibration is not None:
        for value, name in ((calibration.real_q95, "real 95th percentile"),
                            (calibration.fake_q5, "fake 5th percentile"),
                            (calibration.threshold, "threshold")):
            fig.add_vline(x=value, line_dash="dot", annotation_text=name)
    fig.update_layout(barmode="overlay", title="Score distribution", xaxis_title="score", yaxis_title="count")
    return fig


def write_eval_report(report: EvalReport, out_dir: str | Path, name: str = "report") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = write_json(report.to_dict(), out_dir / f"{name}.json")
    if report.entries is not None:
        report.entries.to_csv(out_dir / f"{name}_scores.csv", index=False)
    roc_figure(report).write_html(out_dir / f"{name}_roc.html", include_plotlyjs="cdn")
    distribution_figure(report.real_scores, report.fake_scores).write_html(
        out_dir / f"{name}_distribution.html", include_plotlyjs="cdn")
    logging.info(f"Wrote evaluation report to {path}")
    return path


def write_calibration(calibration: Calibration, real_scores: list[float], fake_scores: list[float],
                      out_dir: str | Path, fingerprint: str) -> Path:
    out_dir = Path(out_dir)
    path = write_json(calibration.to_dict() | {"config_fingerprint": fingerprint}, out_dir / "threshold.json")
    distribution_figure(real_scores, fake_scores, calibration).write_html(
        out_dir / "calibration.html", include_plotlyjs="cdn")
    return path


# ====================================================================
# JPEG sweep
# ====================================================================

def change_curves_figure(trace: pd.DataFrame) -> go.Figure:
    """Per-image score against quality factor, with the real 95th and fake 5th percentile curves."""
    fig = go.Figure()
    for (entry_id, label), rows in trace.dropna(subset=["score"]).groupby(["entry_id", "label"]):
        rows = rows.sort_values("qf")
        fig.add_trace(go.Scatter(
            x=rows["qf"], y=rows["score"], mode="lines",
            line=dict(width=0.5, color="steelblue" if label == "real" else "indianred"),
            opacity=0.4, showlegend=False, name=entry_id,
        ))
    by_qf = trace.dropna(subset=["score"]).groupby(["qf", "label"])["score"]
    q95 = by_qf.quantile(0.95).unstack()
    q5 = by_qf.quantile(0.05).unstack()
    if "real" in q95:
        fig.add_trace(go.Scatter(x=q95.index, y=q95["real"], mode="lines", name="real 95th percentile",
                                 line=dict(width=3, color="navy")))
    if "fake" in q5:
        fig.add_trace(go.Scatter(x=q5.index, y=q5["fake"], mode="lines", name="fake 5th percentile",
                                 line=dict(width=3, color="darkred")))
    fig.update_layout(title="Score change under JPEG compression", xaxis_title="JPEG quality factor",
                      yaxis_title="score")
    return fig


def write_sweep(sweep, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for qf, report in sweep.reports.items():
        write_json(report.to_dict() | {"qf": qf, "delta_auc": sweep.delta_auc[qf]}, out_dir / f"report_qf{qf:03d}.json")
    sweep.trace[["entry_id", "qf", "score"]].to_csv(out_dir / "sweep_scores.csv", index=False)
    summary_path = out_dir / "sweep_summary.csv"
    sweep.summary().to_csv(summary_path, index=False)
    change_curves_figure(sweep.trace).write_html(out_dir / "change_curves.html", include_plotlyjs="cdn")
    return summary_path


# ====================================================================
# Fine-tuning
# ====================================================================

def loss_trace_figure(trace: pd.DataFrame) -> go.Figure:
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=trace["step"], y=trace["total"], mode="markers", name="evaluated"))
    accepted = trace[trace["accepted"]]
    fig.add_trace(go.Scatter(x=accepted["step"], y=accepted["total"], mode="lines+markers", name="accepted"))
    fig.update_layout(title="Fine-tuning loss", xaxis_title="evaluation", yaxis_title="total loss",
                      yaxis_type="log" if np.all(trace["total"] > 0) else "linear")
    return fig


def write_finetune(result: FinetuneResult, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.trace.to_csv(out_dir / "loss_trace.csv", index=False)
    loss_trace_figure(result.trace).write_html(out_dir / "loss_trace.html", include_plotlyjs="cdn")
    return write_json(result.to_dict(), out_dir / "tuned_generator.json")


def write_finetune_ablation(ablation, comparison: dict, out_dir: str | Path,
                            gain: float = Config.FINETUNE_GAIN) -> Path:
    """AUC table of the four generator/mask variants and the amplified self-reconstruction diffs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (i_rr, diff) in comparison.items():
        save_image(i_rr, out_dir / f"recon_{name}.png")
        save_image(render_diff_visualization(diff, gain), out_dir / f"diff_recon_{name}.png")
    path = out_dir / "finetune_ablation.csv"
    ablation.summary().to_csv(path, index=False)
    logging.info(f"Wrote fine-tuning ablation to {path}")
    return path

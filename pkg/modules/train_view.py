import logging

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from modules.file_tools import atomic_write_frame, atomic_write_text
from modules.lab_assets import REPORT_COLUMNS
from modules.train_model import TrainReport

"""
TRAIN VIEW MODULE
-----------------
Responsibility: Rendering and export of training reports.
1. Report CSV (one row per completed epoch)
2. Interactive training curves (self-contained Plotly HTML)
3. Console summary table
"""

logger = logging.getLogger(__name__)

CURVE_COLORS = {
    "d_loss": "#ef4444",
    "ge_loss": "#22c55e",
    "value": "#facc15",
    "recon_error": "#38bdf8",
}


def report_frame(report: TrainReport) -> pd.DataFrame:
    if not report.records:
        return pd.DataFrame(columns=REPORT_COLUMNS)
    return pd.DataFrame(report.rows())[REPORT_COLUMNS]


def write_report_csv(report: TrainReport, path: str) -> None:
    atomic_write_frame(path, report_frame(report))
    logger.info("Wrote training report (%d epochs) to %s", len(report.records), path)


def build_training_figure(report: TrainReport, title: str = "Training curves") -> go.Figure:
    """
    Two stacked panels: adversarial losses and the value estimate on top,
    reconstruction error below (with the untrained baseline as a dotted line).
    """
    df = report_frame(report)
    fig = make_subplots(rows=2, cols=1, shared_xaxes=True, vertical_spacing=0.08,
                        subplot_titles=("Losses / value estimate", "Reconstruction error"))

    for column in ("d_loss", "ge_loss", "value"):
        fig.add_trace(go.Scatter(
            x=df["epoch"], y=df[column],
            mode="lines", name=column,
            line=dict(color=CURVE_COLORS[column], width=1.5)
        ), row=1, col=1)

    fig.add_trace(go.Scatter(
        x=df["epoch"], y=df["recon_error"],
        mode="lines+markers", name="recon_error",
        line=dict(color=CURVE_COLORS["recon_error"], width=1.5)
    ), row=2, col=1)

    if pd.notna(report.initial_recon_error) and not df.empty:
        fig.add_shape(type="line",
            x0=df["epoch"].iloc[0], x1=df["epoch"].iloc[-1],
            y0=report.initial_recon_error, y1=report.initial_recon_error,
            line=dict(color="orange", width=1, dash="dot"),
            row=2, col=1,
        )

    fig.update_layout(
        title=title,
        height=650,
        template="plotly_dark",
        margin=dict(l=20, r=40, t=70, b=20),
        legend=dict(orientation="h", y=1.02, x=0, xanchor="left", yanchor="bottom")
    )
    fig.update_xaxes(title_text="epoch", row=2, col=1)
    return fig


def write_training_chart(report: TrainReport, path: str, title: str = "Training curves") -> None:
    fig = build_training_figure(report, title)
    atomic_write_text(path, fig.to_html(full_html=True, include_plotlyjs=True))
    logger.info("Wrote training curves to %s", path)


def render_report_summary(report: TrainReport, last: int = 5) -> str:
    """Markdown table of the last few epochs (plain text when tabulate is missing)."""
    df = report_frame(report).tail(last)
    try:
        return df.to_markdown(index=False, floatfmt=".4f")
    except ImportError:
        return df.to_string(index=False)

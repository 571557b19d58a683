import logging
import os
from datetime import datetime
from pathlib import Path

import pandas as pd
import plotly.graph_objects as go
from jinja2 import Template

from constants import TEMPLATE_PATH
from utils import atomic_write_text

logger = logging.getLogger(__name__)

REGION_COLORS = ["#64b5f6", "#81c784", "#ffb74d", "#e57373", "#ba68c8", "#4db6ac", "#f06292"]

FALLBACK_TEMPLATE = """<!DOCTYPE html>
<html>
<head><title>Tube Controller Run Report</title></head>
<body><h1>Tube Controller Run Report</h1><p>Template not found, using fallback.</p></body>
</html>"""


def load_template(path=TEMPLATE_PATH):
    try:
        with open(path, 'r', encoding='utf-8') as file:
            template = file.read()
        logger.info(f"Loaded HTML template from {path}")
        return template
    except FileNotFoundError:
        logger.error(f"HTML template not found at {path}")
        return FALLBACK_TEMPLATE


def _dark(fig, title, x_title, y_title):
    fig.update_layout(
        template="plotly_dark",
        title=title,
        xaxis_title=x_title,
        yaxis_title=y_title,
        paper_bgcolor="#1e1e1e",
        plot_bgcolor="#2d2d2d",
        legend=dict(orientation="h", y=-0.2),
    )
    return fig


def create_axis_figure(frame, i):
    """Tube bounds of output i with the trajectory inside."""
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=frame["t"], y=frame[f"gamma_U_{i}"], mode="lines",
                             line=dict(color="#90caf9", width=1), name="upper bound"))
    fig.add_trace(go.Scatter(x=frame["t"], y=frame[f"gamma_L_{i}"], mode="lines",
                             line=dict(color="#90caf9", width=1), fill="tonexty",
                             fillcolor="rgba(100,181,246,0.2)", name="lower bound"))
    fig.add_trace(go.Scatter(x=frame["t"], y=frame[f"y_{i}"], mode="lines",
                             line=dict(color="#ffb74d", width=2), name=f"y_{i}"))
    return _dark(fig, f"Tube and trajectory, output {i}", "Time (s)", f"y_{i}")


def create_trajectory_figure(frame, workspace):
    """Output trajectory in the plane of the first two outputs, regions drawn as rectangles."""
    fig = go.Figure()
    for k, prop in enumerate(sorted(workspace.regions)):
        color = REGION_COLORS[k % len(REGION_COLORS)]
        for box in workspace.regions[prop]:
            fig.add_shape(type="rect", x0=box.lower[0], x1=box.upper[0], y0=box.lower[1], y1=box.upper[1],
                          line=dict(color=color), fillcolor=color, opacity=0.3)
            fig.add_annotation(x=box.center[0], y=box.center[1], text=prop, showarrow=False)
    fig.add_trace(go.Scatter(x=frame["y_1"], y=frame["y_2"], mode="lines",
                             line=dict(color="#ffb74d", width=2), name="trajectory"))
    if len(frame):
        fig.add_trace(go.Scatter(x=[frame["y_1"].iloc[0]], y=[frame["y_2"].iloc[0]], mode="markers",
                                 marker=dict(size=10, color="#81c784"), name="start"))
    fig.update_xaxes(range=[workspace.bounds.lower[0], workspace.bounds.upper[0]])
    fig.update_yaxes(range=[workspace.bounds.lower[1], workspace.bounds.upper[1]])
    return _dark(fig, "Output trajectory", "y_1", "y_2")


def create_error_figure(frame):
    fig = go.Figure()
    for column in sorted(c for c in frame.columns if c.startswith("max_abs_e_stage")):
        fig.add_trace(go.Scatter(x=frame["t"], y=frame[column], mode="lines",
                                 name=column.replace("max_abs_e_", "")))
    fig.add_hline(y=1.0, line=dict(color="#e57373", dash="dash"))
    return _dark(fig, "Largest normalized error per stage", "Time (s)", "max |e|")


def create_html_report(output_dir, frame, monitor, summary, workspace):
    """Render the run report next to the trace files. Returns the report path."""
    output_dir = Path(output_dir).resolve()
    output_dir.mkdir(parents=True, exist_ok=True)
    if not isinstance(frame, pd.DataFrame):
        raise TypeError("frame must be a DataFrame of the trace")
    monitor = monitor or {"word": [], "visits": {}, "sup_abs_e": {}}

    logger.info("Creating visualizations...")
    n = workspace.dimension
    axis_divs = [{"index": i, "div": create_axis_figure(frame, i).to_html(full_html=False)}
                 for i in range(1, n + 1)]
    trajectory_div = create_trajectory_figure(frame, workspace).to_html(full_html=False) if n >= 2 else ""

    logger.info("Rendering HTML report...")
    html = Template(load_template()).render(
        experiment=summary["experiment"],
        timestamp=datetime.now().strftime("%B %d, %Y at %I:%M %p"),
        passed=summary["passed"],
        aborted=summary["aborted"],
        initial_proposition=summary["initial_proposition"],
        samples=summary["samples"],
        horizon=summary["horizon"],
        dt=summary["dt"],
        seed=summary["seed"],
        word=monitor["word"],
        visits=monitor["visits"],
        sup_abs_e=monitor["sup_abs_e"],
        trajectory_div=trajectory_div,
        axis_divs=axis_divs,
        error_div=create_error_figure(frame).to_html(full_html=False),
        events=summary["switch_events"],
    )

    out_file = os.path.join(output_dir, "report.html")
    atomic_write_text(out_file, html)
    logger.info(f"HTML report written to: {out_file}")
    return out_file

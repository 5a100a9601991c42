"""Static SVG score plots.

One figure per series: three vertically stacked panels with aligned time
axes, one per change score (s_r, s_d, s_en), plus a dashed vertical marker
at the labeled change step when known. Output is a self-contained SVG
string; a companion CSV carries the plotted values so the figure can be
re-rendered elsewhere.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .scoring import FIRST_SCORED_STEP, ScoreTriple

PANEL_WIDTH = 760
PANEL_HEIGHT = 130
MARGIN_LEFT = 60
MARGIN_RIGHT = 20
MARGIN_TOP = 24
PANEL_GAP = 18
AXIS_COLOR = "#888888"
TRACE_COLORS = ("#1f77b4", "#d62728", "#2ca02c")
TRACE_NAMES = ("s_r", "s_d", "s_en")


def _panel_polyline(steps: np.ndarray, values: np.ndarray, x0: float, y0: float,
                    x_of, height: float) -> str:
    lo = float(values.min())
    hi = float(values.max())
    span = hi - lo
    if span < 1e-12:
        ys = np.full(values.shape, y0 + height / 2.0)
    else:
        ys = y0 + height - (values - lo) / span * height
    points = " ".join(f"{x_of(t):.2f},{y:.2f}" for t, y in zip(steps, ys))
    return points


def score_plot_svg(triple: ScoreTriple, label_step: int | None = None,
                   title: str = "") -> str:
    """Render one series' three score traces as a standalone SVG document."""
    series = [np.asarray(triple.correlation, dtype=np.float64),
              np.asarray(triple.independent, dtype=np.float64),
              np.asarray(triple.ensemble, dtype=np.float64)]
    length = len(series[0])
    if length < 2:
        raise ValueError("need at least two scored steps to plot")
    steps = np.arange(length) + FIRST_SCORED_STEP
    t_min, t_max = float(steps[0]), float(steps[-1])

    def x_of(t: float) -> float:
        return MARGIN_LEFT + (t - t_min) / (t_max - t_min) * PANEL_WIDTH

    total_width = MARGIN_LEFT + PANEL_WIDTH + MARGIN_RIGHT
    total_height = MARGIN_TOP + 3 * PANEL_HEIGHT + 2 * PANEL_GAP + 36
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_width}" '
        f'height="{total_height}" viewBox="0 0 {total_width} {total_height}">',
        f'<rect width="{total_width}" height="{total_height}" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{MARGIN_LEFT}" y="16" font-family="sans-serif" '
            f'font-size="13" fill="#333333">{title}</text>')

    for i, (name, color, values) in enumerate(zip(TRACE_NAMES, TRACE_COLORS, series)):
        y0 = MARGIN_TOP + i * (PANEL_HEIGHT + PANEL_GAP)
        parts.append(
            f'<rect x="{MARGIN_LEFT}" y="{y0}" width="{PANEL_WIDTH}" '
            f'height="{PANEL_HEIGHT}" fill="none" stroke="{AXIS_COLOR}" '
            f'stroke-width="1"/>')
        parts.append(
            f'<text x="{MARGIN_LEFT - 8}" y="{y0 + PANEL_HEIGHT / 2:.0f}" '
            f'font-family="sans-serif" font-size="12" fill="#333333" '
            f'text-anchor="end">{name}</text>')
        points = _panel_polyline(steps, values, MARGIN_LEFT, y0, x_of, PANEL_HEIGHT)
        parts.append(
            f'<polyline points="{points}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"/>')

    if label_step is not None and t_min <= label_step <= t_max:
        x = x_of(float(label_step))
        y_top = MARGIN_TOP
        y_bot = MARGIN_TOP + 3 * PANEL_HEIGHT + 2 * PANEL_GAP
        parts.append(
            f'<line x1="{x:.2f}" y1="{y_top}" x2="{x:.2f}" y2="{y_bot}" '
            f'stroke="#555555" stroke-width="1" stroke-dasharray="5,4"/>')
        parts.append(
            f'<text x="{x:.2f}" y="{y_bot + 14}" font-family="sans-serif" '
            f'font-size="11" fill="#555555" text-anchor="middle">'
            f'label t={int(label_step)}</text>')

    axis_y = MARGIN_TOP + 3 * PANEL_HEIGHT + 2 * PANEL_GAP + 30
    for t in (int(t_min), int((t_min + t_max) // 2), int(t_max)):
        parts.append(
            f'<text x="{x_of(t):.2f}" y="{axis_y}" font-family="sans-serif" '
            f'font-size="11" fill="#333333" text-anchor="middle">{t}</text>')

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_score_plot(path, triple: ScoreTriple, label_step: int | None = None,
                     title: str = "") -> tuple[Path, Path]:
    """Write the SVG and its companion CSV, returning both paths.

    The CSV sits next to the SVG with the same stem and holds the exact
    plotted values: one row per step, columns t, s_r, s_d, s_en.
    """
    svg_path = Path(path)
    if svg_path.suffix.lower() != ".svg":
        svg_path = svg_path.with_suffix(".svg")
    csv_path = svg_path.with_suffix(".csv")
    svg_path.parent.mkdir(parents=True, exist_ok=True)
    svg_path.write_text(score_plot_svg(triple, label_step, title))
    lines = ["t,s_r,s_d,s_en"]
    for i in range(len(triple.correlation)):
        lines.append(",".join([
            str(i + FIRST_SCORED_STEP),
            repr(float(triple.correlation[i])),
            repr(float(triple.independent[i])),
            repr(float(triple.ensemble[i])),
        ]))
    csv_path.write_text("\n".join(lines) + "\n")
    return svg_path, csv_path

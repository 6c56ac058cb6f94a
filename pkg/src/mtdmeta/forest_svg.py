"""Self-contained SVG forest plots (no plotting dependency).

One horizontal row per study (square marker sized by weight, line for the
interval), a diamond for the combined estimate and a bar for the prediction
interval.  The x axis is the transformed (log-dose) scale with tick labels
on the original dose scale.  Interval bounds outside the axis range, or
non-finite ones, are drawn as clipped arrows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence
from xml.sax.saxutils import escape

from .errors import ValidationError

LEFT_MARGIN = 150
RIGHT_MARGIN = 210
TOP_MARGIN = 30
ROW_HEIGHT = 24
AXIS_HEIGHT = 45


@dataclass(frozen=True)
class ForestRow:
    """One interval glyph: a study row (with weight) or a summary row."""

    label: str
    estimate: float
    lower: float
    upper: float
    weight: Optional[float] = None


@dataclass(frozen=True)
class ForestPlotSpec:
    """Layout of a forest plot: study rows plus the two summary rows."""

    study_rows: tuple[ForestRow, ...]
    combined: ForestRow
    prediction: ForestRow
    log_scale: bool = True
    width: int = 640
    height: int = 0  # 0: derived from the number of rows

    def __post_init__(self):
        object.__setattr__(self, "study_rows", tuple(self.study_rows))
        if self.width < 200:
            raise ValidationError("plot width too small")
        if self.height == 0:
            rows = len(self.study_rows) + 2
            object.__setattr__(
                self, "height", TOP_MARGIN + ROW_HEIGHT * (rows + 1) + AXIS_HEIGHT
            )


def _axis_range(spec: ForestPlotSpec):
    values = []
    for row in spec.study_rows:
        if math.isfinite(row.estimate):
            values.append(row.estimate)
    for row in (spec.combined, spec.prediction):
        for v in (row.estimate, row.lower, row.upper):
            if math.isfinite(v):
                values.append(v)
    if not values:
        raise ValidationError("no finite values to plot")
    lo, hi = min(values), max(values)
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.06 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo, hi, log_scale):
    """Tick positions on the plotted scale, labelled on the original scale."""
    ticks = []
    if log_scale:
        # 1-2-5 ladder over the exp range
        exp_lo, exp_hi = math.exp(lo), math.exp(hi)
        decade = 10 ** math.floor(math.log10(exp_lo))
        value = decade
        while value <= exp_hi * 1.0001:
            for mult in (1.0, 2.0, 5.0):
                v = value * mult
                if exp_lo <= v <= exp_hi:
                    ticks.append((math.log(v), _format_tick(v)))
            value *= 10
        if len(ticks) < 2:
            for frac in (0.0, 0.5, 1.0):
                x = lo + frac * (hi - lo)
                ticks.append((x, _format_tick(math.exp(x))))
    else:
        span = hi - lo
        step = 10 ** math.floor(math.log10(span / 4))
        for mult in (1, 2, 5):
            if span / (step * mult) <= 6:
                step *= mult
                break
        first = math.ceil(lo / step) * step
        x = first
        while x <= hi + 1e-12:
            ticks.append((x, _format_tick(x)))
            x += step
    return ticks


def _format_tick(v):
    if v >= 100:
        return f"{v:.0f}"
    if v >= 1:
        return f"{v:g}"
    return f"{v:.2g}"


def render_forest_svg(spec: ForestPlotSpec) -> str:
    """Render the plot as a standalone SVG document string."""
    lo, hi = _axis_range(spec)
    plot_w = spec.width - LEFT_MARGIN - RIGHT_MARGIN

    def to_x(value):
        return LEFT_MARGIN + (value - lo) / (hi - lo) * plot_w

    x_min, x_max = LEFT_MARGIN, LEFT_MARGIN + plot_w
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{spec.width}" '
        f'height="{spec.height}" viewBox="0 0 {spec.width} {spec.height}" '
        'font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{spec.width}" height="{spec.height}" fill="white"/>',
    ]

    def text(x, y, s, anchor="start", size=12):
        parts.append(
            f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" '
            f'font-size="{size}">{escape(s)}</text>'
        )

    def interval_line(y, lower, upper):
        l_fin = math.isfinite(lower)
        u_fin = math.isfinite(upper)
        x1 = to_x(lower) if l_fin else x_min
        x2 = to_x(upper) if u_fin else x_max
        left_clip = x1 < x_min
        right_clip = x2 > x_max
        x1 = max(x1, x_min)
        x2 = min(x2, x_max)
        parts.append(
            f'<line x1="{x1:.1f}" y1="{y:.1f}" x2="{x2:.1f}" y2="{y:.1f}" '
            'stroke="black" stroke-width="1.2"/>'
        )
        if left_clip or not l_fin:
            parts.append(
                f'<path d="M {x_min + 7:.1f} {y - 4:.1f} L {x_min:.1f} {y:.1f} '
                f'L {x_min + 7:.1f} {y + 4:.1f}" fill="none" stroke="black"/>'
            )
        if right_clip or not u_fin:
            parts.append(
                f'<path d="M {x_max - 7:.1f} {y - 4:.1f} L {x_max:.1f} {y:.1f} '
                f'L {x_max - 7:.1f} {y + 4:.1f}" fill="none" stroke="black"/>'
            )

    def right_columns(y, row: ForestRow):
        desc = f"{row.estimate:.2f} [{row.lower:.2f}, {row.upper:.2f}]"
        text(x_max + 10, y + 4, desc)
        if row.weight is not None:
            text(spec.width - 8, y + 4, f"{100 * row.weight:.1f}%", anchor="end")

    y = TOP_MARGIN
    text(8, y - 10, "study")
    text(x_max + 10, y - 10, "estimate [95% CI]")
    text(spec.width - 8, y - 10, "weight", anchor="end")

    for row in spec.study_rows:
        cy = y + ROW_HEIGHT / 2
        text(8, cy + 4, row.label)
        interval_line(cy, row.lower, row.upper)
        if math.isfinite(row.estimate) and x_min <= to_x(row.estimate) <= x_max:
            side = 4.0 + 10.0 * math.sqrt(row.weight if row.weight else 0.1)
            cx = to_x(row.estimate)
            parts.append(
                f'<rect x="{cx - side / 2:.1f}" y="{cy - side / 2:.1f}" '
                f'width="{side:.1f}" height="{side:.1f}" fill="#444"/>'
            )
        right_columns(cy, row)
        y += ROW_HEIGHT

    # combined: diamond spanning the interval
    cy = y + ROW_HEIGHT / 2
    text(8, cy + 4, spec.combined.label)
    cx1 = max(to_x(spec.combined.lower), x_min)
    cx2 = min(to_x(spec.combined.upper), x_max)
    cxm = to_x(spec.combined.estimate)
    parts.append(
        f'<polygon points="{cx1:.1f},{cy:.1f} {cxm:.1f},{cy - 7:.1f} '
        f'{cx2:.1f},{cy:.1f} {cxm:.1f},{cy + 7:.1f}" fill="#1a4d8f"/>'
    )
    right_columns(cy, spec.combined)
    y += ROW_HEIGHT

    # prediction: plain bar
    cy = y + ROW_HEIGHT / 2
    text(8, cy + 4, spec.prediction.label)
    px1 = max(to_x(spec.prediction.lower), x_min)
    px2 = min(to_x(spec.prediction.upper), x_max)
    parts.append(
        f'<rect x="{px1:.1f}" y="{cy - 4:.1f}" width="{max(px2 - px1, 1):.1f}" '
        'height="8" fill="#8aa8cc"/>'
    )
    right_columns(cy, spec.prediction)
    y += ROW_HEIGHT

    axis_y = y + 12
    parts.append(
        f'<line x1="{x_min}" y1="{axis_y}" x2="{x_max}" y2="{axis_y}" stroke="black"/>'
    )
    for pos, label in _ticks(lo, hi, spec.log_scale):
        tx = to_x(pos)
        parts.append(
            f'<line x1="{tx:.1f}" y1="{axis_y}" x2="{tx:.1f}" y2="{axis_y + 5}" stroke="black"/>'
        )
        text(tx, axis_y + 18, label, anchor="middle", size=11)
    parts.append("</svg>")
    return "\n".join(parts)

"""Hand-emitted SVG plots on a fixed 960x540 viewBox.

Data coordinates map through explicit linear/log scales so golden tests can
check structure and positions; styling is intentionally plain.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH = 960
HEIGHT = 540
MARGIN_LEFT = 80
MARGIN_RIGHT = 40
MARGIN_TOP = 50
MARGIN_BOTTOM = 60

PLOT_W = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
PLOT_H = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

MEMORY_COLOR = "#4878b0"
COMPUTE_COLOR = "#e08214"
WATERLINE_COLOR = "#2060c0"


def linear_scale(lo: float, hi: float, out_lo: float, out_hi: float):
    span = hi - lo or 1.0
    return lambda v: out_lo + (v - lo) / span * (out_hi - out_lo)


def log_scale(lo: float, hi: float, out_lo: float, out_hi: float):
    lo = max(lo, 1e-12)
    span = math.log(hi / lo) or 1.0
    return lambda v: out_lo + math.log(max(v, 1e-12) / lo) / span * (out_hi - out_lo)


def _f(value: float) -> str:
    return f"{value:.2f}"


class Canvas:
    def __init__(self, title: str = ""):
        self._parts: list[str] = []
        if title:
            self.text(WIDTH / 2, MARGIN_TOP / 2 + 5, title, size=16, anchor="middle")

    def line(self, x1, y1, x2, y2, stroke="#444", width=1.0, dash=""):
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self._parts.append(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{stroke}" stroke-width="{width}"{dash_attr}/>'
        )

    def rect(self, x, y, w, h, fill, opacity=1.0):
        self._parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
            f'fill="{fill}" fill-opacity="{opacity}"/>'
        )

    def circle(self, cx, cy, r, fill, stroke="none"):
        self._parts.append(
            f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" fill="{fill}" stroke="{stroke}"/>'
        )

    def polyline(self, points, stroke, width=1.5, dash=""):
        coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in points)
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self._parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width}"{dash_attr}/>'
        )

    def text(self, x, y, content, size=12, anchor="start", fill="#222"):
        self._parts.append(
            f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" '
            f'fill="{fill}" font-family="sans-serif">{escape(str(content))}</text>'
        )

    def render(self) -> str:
        body = "\n".join(self._parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}">\n'
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n'
            f"{body}\n</svg>\n"
        )


def _axes(canvas, x_label, y_label):
    canvas.line(MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM)
    canvas.line(
        MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM, WIDTH - MARGIN_RIGHT, HEIGHT - MARGIN_BOTTOM
    )
    canvas.text(WIDTH / 2, HEIGHT - 15, x_label, anchor="middle")
    canvas.text(18, HEIGHT / 2, y_label, anchor="middle")


def waterline_plot(verdict, device, title: str) -> str:
    """Kernels side by side on a time axis, each reaching up to its intensity."""
    from .perf import Bound

    canvas = Canvas(title)
    _axes(canvas, "cumulative attainable latency [ms]", "op/byte")

    total_ms = verdict.latency_ms
    intensities = [v.intensity for v in verdict.verdicts if v.intensity > 0]
    y_lo = min(intensities + [device.op_byte]) / 4 if intensities else 0.1
    y_hi = max(intensities + [device.op_byte]) * 4
    sx = linear_scale(0.0, total_ms, MARGIN_LEFT, WIDTH - MARGIN_RIGHT)
    sy = log_scale(y_lo, y_hi, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP)

    cursor = 0.0
    for v in verdict.verdicts:
        width_ms = v.latency_ms
        x0, x1 = sx(cursor), sx(cursor + width_ms)
        top = sy(max(v.intensity, y_lo))
        color = COMPUTE_COLOR if v.bound == Bound.COMPUTE else MEMORY_COLOR
        canvas.rect(x0, top, max(x1 - x0, 0.5), HEIGHT - MARGIN_BOTTOM - top, color, opacity=0.8)
        cursor += width_ms

    y_water = sy(device.op_byte)
    canvas.line(MARGIN_LEFT, y_water, WIDTH - MARGIN_RIGHT, y_water, WATERLINE_COLOR, 2.0)
    canvas.text(
        WIDTH - MARGIN_RIGHT, y_water - 6, f"op:byte = {device.op_byte:.1f}", anchor="end",
        fill=WATERLINE_COLOR,
    )
    canvas.text(
        MARGIN_LEFT + 10,
        MARGIN_TOP + 18,
        f"max efficiency: {100 * verdict.max_efficiency:.1f}%",
        size=14,
    )
    return canvas.render()


def gap_plot(points, device, title: str) -> str:
    """Accuracy versus latency on a log axis; each sample joins its ideal and
    actual latency with a segment labeled by computational efficiency."""
    canvas = Canvas(title)
    _axes(canvas, "latency [ms] (log scale)", "accuracy [%]")

    plotted = [p for p in points if p.sample.accuracy_pct is not None]
    if plotted:
        lats = [p.ideal_latency * 1e3 for p in plotted] + [p.actual_latency * 1e3 for p in plotted]
        accs = [p.sample.accuracy_pct for p in plotted]
        sx = log_scale(min(lats) * 0.8, max(lats) * 1.2, MARGIN_LEFT, WIDTH - MARGIN_RIGHT)
        sy = linear_scale(min(accs) - 0.5, max(accs) + 0.5, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP)
        for p in plotted:
            y = sy(p.sample.accuracy_pct)
            x_i, x_a = sx(p.ideal_latency * 1e3), sx(p.actual_latency * 1e3)
            canvas.line(x_i, y, x_a, y, "#999", 1.0)
            canvas.circle(x_i, y, 3.5, "white", stroke="#333")
            canvas.circle(x_a, y, 3.5, "#333")
            canvas.text((x_i + x_a) / 2, y - 6, f"{100 * p.efficiency:.0f}%", size=10, anchor="middle")
    return canvas.render()


def sweep_plot(curves, title: str) -> str:
    """Efficiency versus op:byte ratio: waterline solid, roofline dashed."""
    palette = ["#4878b0", "#e08214", "#3a923a", "#b04846"]
    canvas = Canvas(title)
    _axes(canvas, "op:byte ratio (log scale)", "max computational efficiency")

    ratios = [pt.op_byte for _, pts in curves for pt in pts]
    sx = log_scale(min(ratios), max(ratios), MARGIN_LEFT, WIDTH - MARGIN_RIGHT)
    sy = linear_scale(0.0, 1.0, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP)

    for i, (name, pts) in enumerate(curves):
        color = palette[i % len(palette)]
        canvas.polyline([(sx(p.op_byte), sy(p.waterline_efficiency)) for p in pts], color, 2.0)
        canvas.polyline(
            [(sx(p.op_byte), sy(p.roofline_efficiency)) for p in pts], color, 1.5, dash="6,4"
        )
        canvas.text(MARGIN_LEFT + 10, MARGIN_TOP + 18 + 16 * i, f"{name} (dashed: roofline)", fill=color)
    return canvas.render()

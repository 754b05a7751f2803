"""Static SVG scatter plot with a least-squares line.

Only the regression line is drawn as a ``<line>`` element; axes and ticks
are ``<path>`` elements, so the markup is easy to check structurally.
"""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import __version__

WIDTH, HEIGHT = 480, 360
MARGIN = {"left": 64, "right": 16, "top": 28, "bottom": 48}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    return np.linspace(lo, hi, count)


def scatter_svg(
    x: Sequence[float],
    y: Sequence[float],
    x_label: str,
    y_label: str,
    r: float | None = None,
    title: str | None = None,
) -> str:
    """Render points ``(x, y)`` and their least-squares line as SVG markup."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("scatter plot needs two equal-length series with at least 2 points")
    slope, intercept = np.polyfit(x, y, 1)

    def padded(v):
        lo, hi = float(v.min()), float(v.max())
        pad = (hi - lo) * 0.05 or 0.5
        return lo - pad, hi + pad

    (x0, x1), (y0, y1) = padded(x), padded(y)
    left, top = MARGIN["left"], MARGIN["top"]
    plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
    plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(v):
        return left + (v - x0) / (x1 - x0) * plot_w

    def py(v):
        return top + plot_h - (v - y0) / (y1 - y0) * plot_h

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f"<!-- isospec {__version__} -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<path d="M{left},{top} V{top + plot_h} H{left + plot_w}" stroke="black" fill="none"/>',
    ]
    ticks = []
    for tx in _ticks(x0, x1):
        ticks.append(f"M{_fmt(px(tx))},{top + plot_h} v4")
        out.append(f'<text x="{_fmt(px(tx))}" y="{top + plot_h + 16}" text-anchor="middle">{tx:.2f}</text>')
    for ty in _ticks(y0, y1):
        ticks.append(f"M{left},{_fmt(py(ty))} h-4")
        out.append(f'<text x="{left - 6}" y="{_fmt(py(ty) + 4)}" text-anchor="end">{ty:.2f}</text>')
    out.append(f'<path d="{" ".join(ticks)}" stroke="black" fill="none"/>')
    for xi, yi in zip(x, y):
        out.append(f'<circle cx="{_fmt(px(xi))}" cy="{_fmt(py(yi))}" r="3" fill="#1f77b4" fill-opacity="0.7"/>')
    out.append(
        f'<line x1="{_fmt(px(x0))}" y1="{_fmt(py(slope * x0 + intercept))}" '
        f'x2="{_fmt(px(x1))}" y2="{_fmt(py(slope * x1 + intercept))}" stroke="#d62728" stroke-width="1.5"/>'
    )
    out.append(
        f'<text x="{left + plot_w / 2}" y="{HEIGHT - 10}" text-anchor="middle">{escape(x_label)}</text>'
    )
    out.append(
        f'<text x="14" y="{top + plot_h / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + plot_h / 2})">{escape(y_label)}</text>'
    )
    if title:
        out.append(f'<text x="{left}" y="16">{escape(title)}</text>')
    if r is not None:
        out.append(f'<text x="{left + plot_w - 4}" y="{top + 14}" text-anchor="end">r = {r:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

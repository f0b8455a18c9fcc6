"""Self-contained SVG plots: loss and normalized second derivative over time, fraction histograms."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .report import fmt_float
from .trajectory import TrajectoryRecord

WIDTH, HEIGHT = 640, 360
MARGIN = 50


def clip_series(values: Sequence[Optional[float]], ceiling: float) -> list:
    """Clip at ``ceiling`` (from above only); ``None`` entries stay gaps."""
    return [None if v is None else min(float(v), ceiling) for v in values]


def _scale(lo, hi, a, b):
    if hi == lo:
        hi = lo + 1.0
    return lambda v: a + (v - lo) * (b - a) / (hi - lo)


def _fmt(v: float) -> str:
    return "%.2f" % v


def _polyline(xs, ys, sx, sy, color):
    # split at gaps so missing values are not interpolated across
    parts, cur = [], []
    for x, y in zip(xs, ys):
        if y is None:
            if cur:
                parts.append(cur)
            cur = []
        else:
            cur.append(f"{_fmt(sx(x))},{_fmt(sy(y))}")
    if cur:
        parts.append(cur)
    return "".join(
        f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(p)}"/>\n' for p in parts
    )


def _frame(title: str) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>\n',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" height="{HEIGHT - 2 * MARGIN}" '
        f'fill="none" stroke="black"/>\n',
    ]


def timeseries_svg(rec: TrajectoryRecord, clip: float = 10.0, title: str = "") -> str:
    """Loss (left axis, blue) and clipped normalized second derivative (right axis, red)."""
    t = np.asarray(rec.t, dtype=float)
    loss = list(rec.loss)
    nrm = clip_series(rec.normalized, clip)
    x0, x1 = MARGIN, WIDTH - MARGIN
    y0, y1 = HEIGHT - MARGIN, MARGIN
    sx = _scale(t.min(), t.max(), x0, x1)
    sl = _scale(min(loss), max(loss), y0, y1)
    finite = [v for v in nrm if v is not None]
    lo = min(finite + [0.0])
    hi = max(finite + [0.0])
    sn = _scale(lo, hi, y0, y1)
    out = _frame(title or "loss and normalized second derivative")
    out.append(f'<g data-series="loss" data-max="{fmt_float(max(loss))}">\n')
    out.append(_polyline(t, loss, sx, sl, "#1f4e9c"))
    out.append("</g>\n")
    nmax = fmt_float(max(finite)) if finite else ""
    out.append(f'<g data-series="normalized" data-clip="{fmt_float(clip)}" data-max="{nmax}">\n')
    out.append(_polyline(t, nrm, sx, sn, "#b22222"))
    out.append("</g>\n")
    if lo < 0 < hi:
        out.append(f'<line x1="{x0}" x2="{x1}" y1="{_fmt(sn(0.0))}" y2="{_fmt(sn(0.0))}" '
                   f'stroke="#b22222" stroke-dasharray="4,3" stroke-width="0.8"/>\n')
    if rec.t0 is not None:
        out.append(f'<line x1="{_fmt(sx(rec.t0))}" x2="{_fmt(sx(rec.t0))}" y1="{y0}" y2="{y1}" '
                   f'stroke="gray" stroke-dasharray="2,2"/>\n')
    out.append(f'<text x="{x0}" y="{HEIGHT - 15}" font-size="11">t = {_fmt(t.min())}</text>\n')
    out.append(f'<text x="{x1}" y="{HEIGHT - 15}" font-size="11" text-anchor="end">t = {_fmt(t.max())}</text>\n')
    out.append(f'<text x="5" y="{MARGIN - 8}" font-size="11" fill="#1f4e9c">loss</text>\n')
    out.append(f'<text x="{WIDTH - 5}" y="{MARGIN - 8}" font-size="11" fill="#b22222" text-anchor="end">'
               f'normalized (clipped at {clip:g})</text>\n')
    out.append("</svg>\n")
    return "".join(out)


def histogram_svg(fractions: Sequence[float], bins: int = 10, title: str = "") -> str:
    vals = np.asarray([f for f in fractions if f is not None and math.isfinite(f)], dtype=float)
    lo = min(0.0, float(vals.min())) if vals.size else 0.0
    hi = max(1.0, float(vals.max())) if vals.size else 1.0
    counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    x0, x1 = MARGIN, WIDTH - MARGIN
    y0, y1 = HEIGHT - MARGIN, MARGIN
    sx = _scale(lo, hi, x0, x1)
    sy = _scale(0.0, max(1, int(counts.max()) if counts.size else 1), y0, y1)
    out = _frame(title or "loss change fraction")
    out.append(f'<g data-series="histogram" data-count="{int(vals.size)}">\n')
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        top = sy(float(c))
        out.append(f'<rect x="{_fmt(sx(a))}" y="{_fmt(top)}" width="{_fmt(sx(b) - sx(a))}" '
                   f'height="{_fmt(y0 - top)}" fill="#6a8fc7" stroke="black" stroke-width="0.5" '
                   f'data-count="{int(c)}"/>\n')
    out.append("</g>\n")
    out.append(f'<text x="{x0}" y="{HEIGHT - 15}" font-size="11">{lo:g}</text>\n')
    out.append(f'<text x="{x1}" y="{HEIGHT - 15}" font-size="11" text-anchor="end">{hi:g}</text>\n')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 15}" font-size="11" text-anchor="middle">'
               f'n = {int(vals.size)}</text>\n')
    out.append("</svg>\n")
    return "".join(out)


def write_svg(text: str, path) -> Path:
    path = Path(path)
    path.write_text(text)
    return path

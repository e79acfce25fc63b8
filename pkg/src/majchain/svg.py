"""Minimal SVG charts: polylines with ticks and a legend, and a grid heat map."""
from __future__ import annotations

import math
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

W, H = 640, 420
PAD_L, PAD_R, PAD_T, PAD_B = 70, 150, 40, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    first = math.ceil(lo / step) * step
    out = []
    x = first
    while x <= hi + 1e-12 * abs(step):
        out.append(round(x, 12))
        x += step
    return out


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_chart(series: Mapping[str, tuple[Sequence[float], Sequence[float]]], title: str,
               xlabel: str, ylabel: str) -> str:
    pts = [(x, y) for xs, ys in series.values() for x, y in zip(xs, ys) if math.isfinite(y)]
    if not pts:
        pts = [(0.0, 0.0)]
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = W - PAD_L - PAD_R, H - PAD_T - PAD_B

    def sx(x):
        return PAD_L + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return PAD_T + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<line x1="{PAD_L}" y1="{PAD_T + ph}" x2="{PAD_L + pw}" y2="{PAD_T + ph}" stroke="black"/>',
           f'<line x1="{PAD_L}" y1="{PAD_T}" x2="{PAD_L}" y2="{PAD_T + ph}" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.1f}" y1="{PAD_T + ph}" x2="{sx(t):.1f}" y2="{PAD_T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.1f}" y="{PAD_T + ph + 18}" text-anchor="middle" font-size="11">{_fmt(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{PAD_L - 5}" y1="{sy(t):.1f}" x2="{PAD_L}" y2="{sy(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{PAD_L - 8}" y="{sy(t) + 4:.1f}" text-anchor="end" font-size="11">{_fmt(t)}</text>')
    out.append(f'<text x="{PAD_L + pw / 2:.1f}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{PAD_T + ph / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {PAD_T + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (name, (xs, ys)) in enumerate(series.items()):
        c = COLORS[i % len(COLORS)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys) if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.8" points="{coords}"/>')
        ly = PAD_T + 14 + 18 * i
        out.append(f'<line x1="{W - PAD_R + 10}" y1="{ly}" x2="{W - PAD_R + 30}" y2="{ly}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{W - PAD_R + 35}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heat_map(values: Sequence[Sequence[float]], xs: Sequence[float], ys: Sequence[float], title: str,
             xlabel: str, ylabel: str) -> str:
    """``values[i][j]`` at ``(xs[j], ys[i])``, coloured on [0, 1] from blue to red."""
    pw, ph = W - PAD_L - PAD_R, H - PAD_T - PAD_B
    nx, ny = max(len(xs), 1), max(len(ys), 1)
    cw, ch = pw / nx, ph / ny
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>']
    for i, row in enumerate(values):
        for j, v in enumerate(row):
            f = 0.0 if not math.isfinite(v) else min(1.0, max(0.0, v))
            r, b = int(255 * f), int(255 * (1 - f))
            x, y = PAD_L + j * cw, PAD_T + ph - (i + 1) * ch
            out.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{cw:.1f}" height="{ch:.1f}" fill="rgb({r},64,{b})"/>')
            out.append(f'<text x="{x + cw / 2:.1f}" y="{y + ch / 2 + 4:.1f}" text-anchor="middle" '
                       f'font-size="10" fill="white">{_fmt(v)}</text>')
    for j, x in enumerate(xs):
        out.append(f'<text x="{PAD_L + (j + 0.5) * cw:.1f}" y="{PAD_T + ph + 16}" text-anchor="middle" font-size="11">{_fmt(x)}</text>')
    for i, y in enumerate(ys):
        out.append(f'<text x="{PAD_L - 6}" y="{PAD_T + ph - (i + 0.5) * ch + 4:.1f}" text-anchor="end" font-size="11">{_fmt(y)}</text>')
    out.append(f'<text x="{PAD_L + pw / 2:.1f}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{PAD_T + ph / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 16 {PAD_T + ph / 2:.1f})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

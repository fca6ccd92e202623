"""Dependency-free SVG line charts of logged trajectories."""

from __future__ import annotations

import math
import os

COLORS = {
    "nominal-qp": "#1f4fd1",
    "single-gp-socp": "#14b8c4",
    "mogp-socp": "#e0a800",
    "true-oracle": "#c0392b",
}


def line_chart(series: dict, title: str, width: int = 480, height: int = 260, zero_line: bool = False) -> str:
    """``series`` maps a label to ``(ts, ys)``; non-finite values break the line."""
    pts = [(t, y) for ts, ys in series.values() for t, y in zip(ts, ys) if math.isfinite(y)]
    if not pts:
        return ""
    t0, t1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if zero_line:
        y0, y1 = min(y0, 0.0), max(y1, 0.0)
    if t1 == t0:
        t1 = t0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    ml, mr, mt, mb = 60, 10, 24, 30
    pw, ph = width - ml - mr, height - mt - mb

    def sx(t):
        return ml + (t - t0) / (t1 - t0) * pw

    def sy(y):
        return mt + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#999"/>',
        f'<text x="{ml}" y="16" font-size="13" font-family="sans-serif">{title}</text>',
        f'<text x="4" y="{mt + 10}" font-size="10" font-family="sans-serif">{y1:.3g}</text>',
        f'<text x="4" y="{mt + ph}" font-size="10" font-family="sans-serif">{y0:.3g}</text>',
        f'<text x="{ml}" y="{height - 8}" font-size="10" font-family="sans-serif">{t0:.3g}</text>',
        f'<text x="{ml + pw - 30}" y="{height - 8}" font-size="10" font-family="sans-serif">t={t1:.3g}</text>',
    ]
    if zero_line:
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{sy(0):.2f}" y2="{sy(0):.2f}" stroke="#666" '
                   'stroke-dasharray="4 3"/>')
    for k, (label, (ts, ys)) in enumerate(series.items()):
        color = COLORS.get(label, "#333")
        segs, cur = [], []
        for t, y in zip(ts, ys):
            if math.isfinite(y):
                cur.append(f"{sx(t):.2f},{sy(y):.2f}")
            elif cur:
                segs.append(cur)
                cur = []
        if cur:
            segs.append(cur)
        for seg in segs:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(seg)}"/>')
        out.append(f'<text x="{ml + 6}" y="{mt + 14 + 12 * k}" font-size="10" fill="{color}" '
                   f'font-family="sans-serif">{label}</text>')
    out.append("</svg>")
    return "\n".join(out)


def write_svg_panels(episodes: dict, out_dir: str) -> list[str]:
    """One chart per logged quantity; returns the written paths."""
    paths = []
    for col in ("V", "h", "u", "x2", "z"):
        series = {name: ([r["t"] for r in ep.rows], [float(r[col]) for r in ep.rows]) for name, ep in episodes.items()}
        svg = line_chart(series, col, zero_line=(col == "h"))
        if not svg:
            continue
        path = os.path.join(out_dir, f"{col}.svg")
        with open(path, "w") as fh:
            fh.write(svg)
        paths.append(path)
    return paths

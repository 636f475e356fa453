"""Minimal SVG line plots for simulation traces."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 640, 360
MARGIN = dict(left=70, right=20, top=30, bottom=45)


def _ticks(lo, hi, count=5):
    if hi == lo:
        return [lo]
    return list(np.linspace(lo, hi, count))


def _fmt(v):
    if v == 0:
        return "0"
    a = abs(v)
    if a >= 1e4 or a < 1e-3:
        return f"{v:.2e}"
    return f"{v:.4g}"


COLORS = ("steelblue", "darkorange", "seagreen", "purple", "firebrick", "gray")


def line_plot_svg(t, y, title, ylabel, threshold=None, threshold_label=None):
    """Return the SVG text of a single time series with an optional horizontal line."""
    return overlay_plot_svg({None: (t, y)}, title, ylabel, threshold, threshold_label)


def overlay_plot_svg(series, title, ylabel, threshold=None, threshold_label=None):
    """SVG text of several time series sharing axes; ``series`` maps label -> (t, y)."""
    clean = {}
    for label, (t, y) in series.items():
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(t) & np.isfinite(y)
        clean[label] = (t[ok], y[ok])
    ts = np.concatenate([t for t, _ in clean.values()])
    vals = list(np.concatenate([y for _, y in clean.values()])) + ([threshold] if threshold is not None else [])
    x0, x1 = (float(ts.min()), float(ts.max())) if len(ts) else (0.0, 1.0)
    y0, y1 = (min(vals), max(vals)) if vals else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    L, R, T, B = MARGIN["left"], WIDTH - MARGIN["right"], MARGIN["top"], HEIGHT - MARGIN["bottom"]
    sx = lambda v: L + (v - x0) / (x1 - x0) * (R - L)
    sy = lambda v: B - (v - y0) / (y1 - y0) * (B - T)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
           f'<line x1="{L}" y1="{B}" x2="{R}" y2="{B}" stroke="black"/>',
           f'<line x1="{L}" y1="{T}" x2="{L}" y2="{B}" stroke="black"/>']
    for v in _ticks(x0, x1):
        px = sx(v)
        out.append(f'<line x1="{px:.1f}" y1="{B}" x2="{px:.1f}" y2="{B + 4}" stroke="black"/>')
        out.append(f'<text x="{px:.1f}" y="{B + 17}" text-anchor="middle">{_fmt(v)}</text>')
    for v in _ticks(y0, y1):
        py = sy(v)
        out.append(f'<line x1="{L - 4}" y1="{py:.1f}" x2="{L}" y2="{py:.1f}" stroke="black"/>')
        out.append(f'<text x="{L - 6}" y="{py + 4:.1f}" text-anchor="end">{_fmt(v)}</text>')
    out.append(f'<text x="{(L + R) / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle">t [s]</text>')
    out.append(f'<text x="14" y="{(T + B) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {(T + B) / 2:.1f})">{ylabel}</text>')
    if threshold is not None:
        py = sy(threshold)
        out.append(f'<line x1="{L}" y1="{py:.1f}" x2="{R}" y2="{py:.1f}" stroke="red" stroke-dasharray="6,4"/>')
        if threshold_label:
            out.append(f'<text x="{R - 4}" y="{py - 4:.1f}" text-anchor="end" fill="red">{threshold_label}</text>')
    for k, (label, (t, y)) in enumerate(clean.items()):
        color = COLORS[k % len(COLORS)]
        if len(t):
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(t, y))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        if label is not None:
            ly = T + 14 * (k + 1)
            out.append(f'<line x1="{R - 150}" y1="{ly - 4}" x2="{R - 130}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{R - 125}" y="{ly}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_trace_plots(rows, out_dir, epsilon):
    """Write V.svg, Vdot.svg and mu.svg for a trace; returns the written paths."""
    out_dir = Path(out_dir)
    t = [r.t for r in rows]
    specs = [
        ("V.svg", [r.V for r in rows], "Storage function", "V [J]", None, None),
        ("Vdot.svg", [r.Vdot for r in rows], "Storage function derivative", "dV/dt [W]", 0.0, "0"),
        ("mu.svg", [r.mu for r in rows], "Manipulability index", "mu", epsilon, f"epsilon = {epsilon:g}"),
    ]
    paths = []
    for name, y, title, ylabel, thr, lab in specs:
        p = out_dir / name
        p.write_text(line_plot_svg(t, y, title, ylabel, thr, lab), encoding="utf-8")
        paths.append(p)
    return paths


def finite_range(values):
    v = [x for x in values if math.isfinite(x)]
    return (min(v), max(v)) if v else (math.nan, math.nan)

"""Self-contained SVG convergence plots (log-scale y axis, decade gridlines).

Output depends only on the input numbers, so identical traces give identical bytes.
"""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["svg_convergence_plot", "PALETTE"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
W, H = 640, 420
ML, MR, MT, MB = 70, 150, 30, 50


def _f(v: float) -> str:
    return f"{v:.2f}"


def svg_convergence_plot(series, x_label: str = "iteration", y_label: str = "relative error",
                         title: str = "", floor: float = 1e-16) -> str:
    """Render ``series`` as an SVG string.

    ``series`` is a sequence of ``(label, xs, ys)``; non-positive or non-finite
    ``ys`` are clipped to ``floor``.
    """
    series = [(str(lbl), np.asarray(xs, float), np.clip(np.nan_to_num(np.asarray(ys, float), nan=floor,
                                                                     posinf=1e300), floor, None))
              for lbl, xs, ys in series]
    if not series:
        raise ValueError("nothing to plot")
    xmax = max(float(xs.max()) if xs.size else 0.0 for _, xs, _ in series) or 1.0
    ys_all = np.concatenate([ys for _, _, ys in series if ys.size]) if any(s[2].size for s in series) \
        else np.array([1.0])
    lo = math.floor(math.log10(float(ys_all.min())))
    hi = math.ceil(math.log10(float(ys_all.max())))
    if hi == lo:
        hi = lo + 1
    pw, ph = W - ML - MR, H - MT - MB

    def px(x):
        return ML + pw * x / xmax

    def py(y):
        return MT + ph * (hi - math.log10(y)) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>']
    step = max(1, (hi - lo) // 12)
    for d in range(lo, hi + 1, step):
        y = py(10.0 ** d)
        out.append(f'<line x1="{ML}" y1="{_f(y)}" x2="{ML + pw}" y2="{_f(y)}" stroke="#dddddd" stroke-width="1"/>')
        out.append(f'<text x="{ML - 6}" y="{_f(y + 4)}" font-size="11" text-anchor="end" '
                   f'font-family="sans-serif">1e{d}</text>')
    for k in range(6):
        xv = xmax * k / 5
        x = px(xv)
        out.append(f'<line x1="{_f(x)}" y1="{MT + ph}" x2="{_f(x)}" y2="{MT + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_f(x)}" y="{MT + ph + 18}" font-size="11" text-anchor="middle" '
                   f'font-family="sans-serif">{xv:.4g}</text>')
    out.append(f'<rect x="{ML}" y="{MT}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for idx, (lbl, xs, ys) in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        pts = " ".join(f"{_f(px(x))},{_f(py(y))}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MT + 16 + 18 * idx
        out.append(f'<line x1="{ML + pw + 10}" y1="{ly}" x2="{ML + pw + 30}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{ML + pw + 35}" y="{ly + 4}" font-size="11" font-family="sans-serif">'
                   f'{escape(lbl)}</text>')
    out.append(f'<text x="{ML + pw / 2}" y="{H - 10}" font-size="12" text-anchor="middle" '
               f'font-family="sans-serif">{escape(x_label)}</text>')
    out.append(f'<text x="16" y="{MT + ph / 2}" font-size="12" text-anchor="middle" font-family="sans-serif" '
               f'transform="rotate(-90 16 {_f(MT + ph / 2)})">{escape(y_label)}</text>')
    if title:
        out.append(f'<text x="{ML + pw / 2}" y="18" font-size="13" text-anchor="middle" '
                   f'font-family="sans-serif">{escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"

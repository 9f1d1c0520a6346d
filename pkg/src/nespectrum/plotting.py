"""Minimal SVG output for scatter plots and curves.

Plots are derived artifacts: they read arrays and never modify them.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

__all__ = ["curve_svg", "scatter_svg"]

MAX_MARKS = 50_000
_PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]


def _frame(width, height, body, title=None):
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">\n'
    head += f'<rect width="{width}" height="{height}" fill="white"/>\n'
    if title:
        head += f'<text x="{width / 2}" y="18" font-size="14" text-anchor="middle" font-family="sans-serif">{escape(title)}</text>\n'
    return head + body + "</svg>\n"


def _scale(v, lo, hi, a, b):
    if hi == lo:
        return np.full_like(v, 0.5 * (a + b), dtype=float)
    return a + (v - lo) * (b - a) / (hi - lo)


def scatter_svg(Y, path=None, labels=None, size=600, radius=1.2, max_marks=MAX_MARKS, seed=0, title=None):
    """Scatter of a 2-D embedding, colored by integer ``labels``, downsampled to ``max_marks``."""
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    idx = np.arange(n)
    if n > max_marks:
        idx = np.sort(np.random.default_rng(seed).choice(n, max_marks, replace=False))
    pad = 20
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    half = 0.5 * max(hi - lo)
    mid = 0.5 * (hi + lo)
    xs = _scale(Y[idx, 0], mid[0] - half, mid[0] + half, pad, size - pad)
    ys = _scale(Y[idx, 1], mid[1] - half, mid[1] + half, size - pad, pad)
    if labels is None:
        colors = ["#333333"] * len(idx)
    else:
        lab = np.asarray(labels)[idx]
        _, codes = np.unique(lab, return_inverse=True)
        colors = [_PALETTE[c % len(_PALETTE)] for c in codes]
    body = "".join(
        f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}" fill="{c}" fill-opacity="0.7"/>\n'
        for x, y, c in zip(xs, ys, colors)
    )
    svg = _frame(size, size, body, title)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg


def curve_svg(x, series, path=None, logx=False, logy=False, xlabel="", ylabel="", fit=None,
              width=640, height=420, title=None):
    """Line plot of ``series`` (name -> y values) against ``x``.

    ``fit=(slope, intercept)`` overlays ``y = intercept + slope * x`` in the
    plotted (possibly log) coordinates.
    """
    x = np.asarray(x, dtype=float)
    tx = np.log10 if logx else (lambda v: v)
    ty = np.log10 if logy else (lambda v: v)
    X = tx(x)
    ys = {k: ty(np.asarray(v, dtype=float)) for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] or [np.zeros(1)])
    ylo, yhi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    if fit is not None:
        fy = fit[1] + fit[0] * X
        ylo, yhi = min(ylo, fy.min()), max(yhi, fy.max())
    left, right, top, bottom = 60, width - 20, 30, height - 50
    body = f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>\n'
    body += f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>\n'
    for frac in (0.0, 0.5, 1.0):
        xv = X.min() + frac * (X.max() - X.min())
        yv = ylo + frac * (yhi - ylo)
        xl = 10**xv if logx else xv
        yl = 10**yv if logy else yv
        px = left + frac * (right - left)
        py = bottom - frac * (bottom - top)
        body += f'<text x="{px:.1f}" y="{bottom + 16}" font-size="11" text-anchor="middle" font-family="sans-serif">{xl:.3g}</text>\n'
        body += f'<text x="{left - 6}" y="{py + 4:.1f}" font-size="11" text-anchor="end" font-family="sans-serif">{yl:.3g}</text>\n'
    body += f'<text x="{(left + right) / 2}" y="{height - 12}" font-size="12" text-anchor="middle" font-family="sans-serif">{escape(xlabel)}</text>\n'
    body += f'<text x="14" y="{(top + bottom) / 2}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 14 {(top + bottom) / 2})">{escape(ylabel)}</text>\n'

    def to_px(xv, yv):
        return _scale(xv, X.min(), X.max(), left, right), _scale(yv, ylo, yhi, bottom, top)

    for c, (name, yv) in enumerate(ys.items()):
        ok = np.isfinite(yv)
        px, py = to_px(X[ok], yv[ok])
        color = _PALETTE[c % len(_PALETTE)]
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        body += f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>\n'
        body += "".join(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="2.5" fill="{color}"/>\n' for a, b in zip(px, py))
        body += f'<text x="{right - 4}" y="{top + 14 * (c + 1)}" font-size="11" text-anchor="end" fill="{color}" font-family="sans-serif">{escape(name)}</text>\n'
    if fit is not None and len(X) >= 2:
        px, py = to_px(X[[0, -1]], fit[1] + fit[0] * X[[0, -1]])
        body += f'<line x1="{px[0]:.2f}" y1="{py[0]:.2f}" x2="{px[1]:.2f}" y2="{py[1]:.2f}" stroke="black" stroke-dasharray="4 3"/>\n'
    svg = _frame(width, height, body, title)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(svg)
    return svg


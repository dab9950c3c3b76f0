"""Self-contained SVG 1.1 line and scatter plots.

Output depends only on the data (fixed number formatting, no timestamps), so
plot files hash identically across runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
W, H = 480, 360
LEFT, RIGHT, TOP, BOTTOM = 64, 16, 32, 48


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick(v: float, log: bool) -> str:
    return f"1e{int(round(v))}" if log else f"{v:.3g}"


def _bounds(vals: np.ndarray) -> tuple[float, float]:
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _prep(vals, log: bool) -> np.ndarray:
    v = np.asarray(vals, dtype=np.float64)
    if log:
        if np.any(v <= 0):
            raise ValueError("log axis needs positive values")
        return np.log10(v)
    return v


def _frame(title, xlabel, ylabel, xb, yb, logx, logy) -> list[str]:
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" '
        f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{TOP - 10}" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{LEFT + pw / 2}" y="{H - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{TOP + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 14 {TOP + ph / 2})">{escape(ylabel)}</text>',
    ]
    for k in range(5):
        fx = xb[0] + k * (xb[1] - xb[0]) / 4
        fy = yb[0] + k * (yb[1] - yb[0]) / 4
        px = LEFT + k * pw / 4
        py = TOP + ph - k * ph / 4
        out.append(f'<text x="{_fmt(px)}" y="{H - BOTTOM + 16}" text-anchor="middle">{_tick(fx, logx)}</text>')
        out.append(f'<text x="{LEFT - 6}" y="{_fmt(py + 4)}" text-anchor="end">{_tick(fy, logy)}</text>')
    return out


def _mapper(xb, yb):
    pw, ph = W - LEFT - RIGHT, H - TOP - BOTTOM
    return (lambda x: LEFT + (x - xb[0]) / (xb[1] - xb[0]) * pw,
            lambda y: TOP + ph - (y - yb[0]) / (yb[1] - yb[0]) * ph)


def _legend(labels) -> list[str]:
    out = []
    for k, label in enumerate(labels):
        y = TOP + 14 + 14 * k
        out.append(f'<rect x="{W - RIGHT - 120}" y="{y - 8}" width="10" height="10" '
                   f'fill="{PALETTE[k % len(PALETTE)]}"/>')
        out.append(f'<text x="{W - RIGHT - 104}" y="{y + 1}">{escape(label)}</text>')
    return out


def line_plot(series: list[Series], title: str = "", xlabel: str = "", ylabel: str = "",
              logx: bool = False, logy: bool = False, markers: bool = True) -> str:
    xs = [_prep(s.x, logx) for s in series]
    ys = [_prep(s.y, logy) for s in series]
    xb, yb = _bounds(np.concatenate(xs)), _bounds(np.concatenate(ys))
    mx, my = _mapper(xb, yb)
    out = _frame(title, xlabel, ylabel, xb, yb, logx, logy)
    for k, (x, y) in enumerate(zip(xs, ys)):
        color = PALETTE[k % len(PALETTE)]
        pts = " ".join(f"{_fmt(mx(a))},{_fmt(my(b))}" for a, b in zip(x, y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        if markers:
            out += [f'<circle cx="{_fmt(mx(a))}" cy="{_fmt(my(b))}" r="2.5" fill="{color}"/>'
                    for a, b in zip(x, y)]
    out += _legend([s.label for s in series])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def scatter_plot(series: list[Series], title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    xb = _bounds(np.concatenate([np.asarray(s.x, dtype=float) for s in series]))
    yb = _bounds(np.concatenate([np.asarray(s.y, dtype=float) for s in series]))
    mx, my = _mapper(xb, yb)
    out = _frame(title, xlabel, ylabel, xb, yb, False, False)
    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        out += [f'<circle cx="{_fmt(mx(a))}" cy="{_fmt(my(b))}" r="1.5" fill="{color}" fill-opacity="0.5"/>'
                for a, b in zip(s.x, s.y) if math.isfinite(a) and math.isfinite(b)]
    out += _legend([s.label for s in series])
    out.append("</svg>")
    return "\n".join(out) + "\n"

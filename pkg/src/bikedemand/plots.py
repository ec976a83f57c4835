"""Minimal standalone SVG line and bar charts."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
W, H, PAD = 640, 360, 48


def _frame(title: str, body: list[str]) -> str:
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        *body,
        "</svg>",
        "",
    ])


def _scale(v, lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return a + (np.asarray(v, dtype=float) - lo) / span * (b - a)


def line_chart(series: dict, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """``series`` maps a label to (x, y) arrays; all share one pair of axes."""
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in series.values()]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in series.values()]) if series else np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = min(0.0, float(ys.min())), float(ys.max())
    body = []
    for n, (label, (x, y)) in enumerate(series.items()):
        px = _scale(x, x0, x1, PAD, W - PAD)
        py = _scale(y, y0, y1, H - PAD, PAD)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
        color = _COLORS[n % len(_COLORS)]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        body.append(f'<text x="{W - PAD + 4}" y="{PAD + 14 * n}" font-family="sans-serif" font-size="10" '
                    f'fill="{color}">{escape(str(label))}</text>')
    body += _axis_labels(xlabel, ylabel, (x0, x1), (y0, y1))
    return _frame(title, body)


def bar_chart(labels, values, title: str = "", ylabel: str = "") -> str:
    values = np.asarray(values, dtype=float)
    top = float(values.max()) if len(values) and values.max() > 0 else 1.0
    n = max(len(values), 1)
    slot = (W - 2 * PAD) / n
    body = []
    for b, (label, v) in enumerate(zip(labels, values)):
        h = (H - 2 * PAD) * v / top
        x = PAD + b * slot + 0.15 * slot
        body.append(f'<rect x="{x:.2f}" y="{H - PAD - h:.2f}" width="{0.7 * slot:.2f}" height="{h:.2f}" '
                    f'fill="{_COLORS[b % len(_COLORS)]}"/>')
        body.append(f'<text x="{x + 0.35 * slot:.2f}" y="{H - PAD + 14}" text-anchor="middle" '
                    f'font-family="sans-serif" font-size="10">{escape(str(label))}</text>')
        body.append(f'<text x="{x + 0.35 * slot:.2f}" y="{H - PAD - h - 4:.2f}" text-anchor="middle" '
                    f'font-family="sans-serif" font-size="9">{v:.4g}</text>')
    body += _axis_labels("", ylabel, None, (0.0, top))
    return _frame(title, body)


def _axis_labels(xlabel, ylabel, xr, yr) -> list[str]:
    out = []
    if xlabel:
        out.append(f'<text x="{W / 2:.1f}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{H / 2:.1f}" text-anchor="middle" font-family="sans-serif" font-size="11" '
                   f'transform="rotate(-90 14 {H / 2:.1f})">{escape(ylabel)}</text>')
    if xr is not None:
        out.append(f'<text x="{PAD}" y="{H - PAD + 14}" font-family="sans-serif" font-size="9">{xr[0]:.4g}</text>')
        out.append(f'<text x="{W - PAD}" y="{H - PAD + 14}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="9">{xr[1]:.4g}</text>')
    out.append(f'<text x="{PAD - 4}" y="{H - PAD}" text-anchor="end" font-family="sans-serif" font-size="9">{yr[0]:.4g}</text>')
    out.append(f'<text x="{PAD - 4}" y="{PAD + 4}" text-anchor="end" font-family="sans-serif" font-size="9">{yr[1]:.4g}</text>')
    return out

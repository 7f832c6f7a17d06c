"""Bare-bones SVG line plots for eyeballing decoded draws; no styling ambitions."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def line_plot(x, groups, path, title: str = "", width: int = 640, height: int = 360, max_lines: int = 20) -> None:
    """Overlay lines; ``groups`` maps a legend label to an array of shape (lines, len(x)).

    Each group gets one colour; at most ``max_lines`` lines per group are drawn.
    """
    x = np.asarray(x, dtype=float)
    arrays = {k: np.atleast_2d(np.asarray(v, dtype=float))[:max_lines] for k, v in groups.items()}
    finite = [a[np.isfinite(a)] for a in arrays.values() if a.size]
    ys = np.concatenate(finite) if finite else np.array([0.0, 1.0])
    y_lo, y_hi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if y_hi <= y_lo:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    x_lo, x_hi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    pad = 40

    def px(v):
        return pad + (v - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="#888"/>',
        f'<text x="{width / 2}" y="{pad / 2}" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{pad}" y="{height - pad / 3}" font-size="10">{x_lo:.3g}</text>',
        f'<text x="{width - pad}" y="{height - pad / 3}" font-size="10" text-anchor="end">{x_hi:.3g}</text>',
        f'<text x="2" y="{height - pad}" font-size="10">{y_lo:.3g}</text>',
        f'<text x="2" y="{pad + 4}" font-size="10">{y_hi:.3g}</text>',
    ]
    for g, (label, arr) in enumerate(arrays.items()):
        colour = PALETTE[g % len(PALETTE)]
        for line in arr:
            pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, line) if np.isfinite(b))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-opacity="0.6"/>')
        parts.append(
            f'<text x="{width - pad - 4}" y="{pad + 14 * (g + 1)}" font-size="11" text-anchor="end" '
            f'fill="{colour}">{escape(str(label))}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")

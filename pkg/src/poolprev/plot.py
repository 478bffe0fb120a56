"""Minimal SVG plots of prevalence curves.

Plots are a convenience: everything drawn here is also written to CSV.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 720, 400
MARGIN = dict(left=60, right=20, top=30, bottom=45)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


class _Axes:
    def __init__(self, x_range, y_max):
        self.x0, self.x1 = x_range
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        self.y1 = y_max if y_max > 0 else 1.0
        self.w = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def x(self, t):
        return MARGIN["left"] + (np.asarray(t, float) - self.x0) / (self.x1 - self.x0) * self.w

    def y(self, v):
        return MARGIN["top"] + (1.0 - np.asarray(v, float) / self.y1) * self.h

    def polyline(self, t, v, color, width=1.5, opacity=1.0):
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(self.x(t), self.y(v)))
        return (
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}" stroke-opacity="{opacity}"/>'
        )

    def band(self, t, lo, hi, color, opacity=0.25):
        xs = np.concatenate([self.x(t), self.x(t)[::-1]])
        ys = np.concatenate([self.y(hi), self.y(lo)[::-1]])
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(xs, ys))
        return f'<polygon points="{pts}" fill="{color}" fill-opacity="{opacity}" stroke="none"/>'

    def rug(self, times):
        base = MARGIN["top"] + self.h
        return "".join(
            f'<line x1="{x:.2f}" y1="{base:.2f}" x2="{x:.2f}" y2="{base - 8:.2f}" stroke="black" stroke-width="1"/>'
            for x in self.x(times)
        )

    def frame(self, title, ylabel="prevalence", xlabel="time (days)"):
        left, top = MARGIN["left"], MARGIN["top"]
        bottom = top + self.h
        out = [f'<rect x="{left}" y="{top}" width="{self.w}" height="{self.h}" fill="none" stroke="#444"/>']
        for v in np.linspace(0.0, self.y1, 5):
            y = self.y(v)
            out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{v:.3g}</text>')
        for t in np.linspace(self.x0, self.x1, 6):
            x = self.x(t)
            out.append(f'<text x="{x:.2f}" y="{bottom + 16}" font-size="11" text-anchor="middle">{t:.4g}</text>')
        out.append(
            f'<text x="{left + self.w / 2:.1f}" y="{HEIGHT - 8}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>'
        )
        out.append(
            f'<text x="14" y="{top + self.h / 2:.1f}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 14 {top + self.h / 2:.1f})">{escape(ylabel)}</text>'
        )
        out.append(f'<text x="{left}" y="{top - 10}" font-size="13">{escape(title)}</text>')
        return out


def _document(parts):
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">'
    )
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *parts, "</svg>", ""])


def curve_svg(summary, obs_times, title="Estimated prevalence", truth=None):
    """Median curve with its 95% band and rug marks at the observation times.

    ``truth`` may be a ``(times, p)`` pair drawn as a dashed reference.
    """
    y_max = float(np.max(summary.hi95)) if len(summary) else 1.0
    if truth is not None:
        y_max = max(y_max, float(np.max(truth[1])))
    span = (float(min(summary.times.min(), np.min(obs_times))), float(max(summary.times.max(), np.max(obs_times))))
    ax = _Axes(span, 1.05 * y_max)
    parts = ax.frame(title)
    parts.append(ax.band(summary.times, summary.lo95, summary.hi95, PALETTE[0]))
    parts.append(ax.polyline(summary.times, summary.median, PALETTE[0], width=2.0))
    if truth is not None:
        parts.append(ax.polyline(truth[0], truth[1], "black", width=1.2).replace("/>", ' stroke-dasharray="5,4"/>'))
    parts.append(ax.rug(obs_times))
    return _document(parts)


def overlay_svg(times, curves, band=None, obs_times=None, title="Replicate median curves", color=PALETTE[1]):
    """Many median curves (rows of ``curves``) over an optional reference band.

    ``band`` is a summary whose 95% interval is shaded underneath.
    """
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    y_max = float(curves.max()) if curves.size else 1.0
    lo_t, hi_t = float(np.min(times)), float(np.max(times))
    if band is not None:
        y_max = max(y_max, float(np.max(band.hi95)))
        lo_t, hi_t = min(lo_t, float(band.times.min())), max(hi_t, float(band.times.max()))
    ax = _Axes((lo_t, hi_t), 1.05 * y_max)
    parts = ax.frame(title)
    if band is not None:
        parts.append(ax.band(band.times, band.lo95, band.hi95, PALETTE[0]))
        parts.append(ax.polyline(band.times, band.median, PALETTE[0], width=2.0))
    for row in curves:
        parts.append(ax.polyline(times, row, color, width=1.0, opacity=0.6))
    if obs_times is not None:
        parts.append(ax.rug(obs_times))
    return _document(parts)


def write_svg(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)

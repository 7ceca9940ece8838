"""Static SVG emission for discrepancy curves and 2-d particle scatters.

The writer is deliberately dependency-free and embeds the data axis ranges
as ``data-*`` attributes on the axes group, so emitted files can be checked
programmatically (well-formedness, axis spans) without a renderer.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dynamics import Trace

PLOT_KINDS = ("mmd_curve", "scatter2d")

_WIDTH, _HEIGHT = 720, 480
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 72, 24, 24, 56
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_POSITIVE_FILL = "#1f77b4"
_NEGATIVE_FILL = "#d62728"


def emit_plot(traces: list[Trace], kind: str, path: str | Path) -> Path:
    """Write a standalone SVG for the given traces; returns the path."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"kind must be one of {PLOT_KINDS}, got {kind!r}")
    if not traces:
        raise ValueError("no traces to plot")
    path = Path(path)
    if kind == "mmd_curve":
        svg = _mmd_curve_svg(traces)
    else:
        svg = _scatter_svg(traces)
    path.write_text(svg)
    return path


class _Frame:
    """Linear map from data coordinates to the SVG plot rectangle."""

    def __init__(self, x_min, x_max, y_min, y_max):
        if x_max <= x_min:
            x_max = x_min + 1.0
        if y_max <= y_min:
            y_max = y_min + 1.0
        self.x_min, self.x_max = float(x_min), float(x_max)
        self.y_min, self.y_max = float(y_min), float(y_max)
        self.left = _MARGIN_L
        self.top = _MARGIN_T
        self.width = _WIDTH - _MARGIN_L - _MARGIN_R
        self.height = _HEIGHT - _MARGIN_T - _MARGIN_B

    def sx(self, x: float) -> float:
        return self.left + (x - self.x_min) / (self.x_max - self.x_min) * self.width

    def sy(self, y: float) -> float:
        return self.top + self.height - (y - self.y_min) / (self.y_max - self.y_min) * self.height

    def axes_group(self, x_label: str, y_label: str) -> list[str]:
        parts = [
            f'<g id="axes" data-x-min="{self.x_min!r}" data-x-max="{self.x_max!r}" '
            f'data-y-min="{self.y_min!r}" data-y-max="{self.y_max!r}">'
        ]
        x0, y0 = self.left, self.top + self.height
        parts.append(
            f'<line x1="{x0}" y1="{y0}" x2="{x0 + self.width}" y2="{y0}" stroke="black"/>'
        )
        parts.append(f'<line x1="{x0}" y1="{self.top}" x2="{x0}" y2="{y0}" stroke="black"/>')
        for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
            xv = self.x_min + frac * (self.x_max - self.x_min)
            yv = self.y_min + frac * (self.y_max - self.y_min)
            xs, ys = self.sx(xv), self.sy(yv)
            parts.append(f'<line x1="{xs}" y1="{y0}" x2="{xs}" y2="{y0 + 5}" stroke="black"/>')
            parts.append(
                f'<text x="{xs}" y="{y0 + 20}" font-size="11" text-anchor="middle">{_fmt(xv)}</text>'
            )
            parts.append(f'<line x1="{x0 - 5}" y1="{ys}" x2="{x0}" y2="{ys}" stroke="black"/>')
            parts.append(
                f'<text x="{x0 - 8}" y="{ys + 4}" font-size="11" text-anchor="end">{_fmt(yv)}</text>'
            )
        parts.append(
            f'<text x="{x0 + self.width / 2}" y="{_HEIGHT - 12}" font-size="13" '
            f'text-anchor="middle">{x_label}</text>'
        )
        parts.append(
            f'<text x="16" y="{self.top + self.height / 2}" font-size="13" text-anchor="middle" '
            f'transform="rotate(-90 16 {self.top + self.height / 2})">{y_label}</text>'
        )
        parts.append("</g>")
        return parts


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1000 or abs(v) < 1e-2:
        return f"{v:.2e}"
    return f"{v:.3g}"


def _svg_header() -> str:
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" '
        f'viewBox="0 0 {_WIDTH} {_HEIGHT}">\n'
        f'<rect width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>'
    )


def _mmd_curve_svg(traces: list[Trace]) -> str:
    for t in traces:
        if not t.records:
            raise ValueError("trace with no records cannot be plotted")
    its = np.concatenate([t.iterations() for t in traces])
    mmds = np.concatenate([t.mmd_series() for t in traces])
    frame = _Frame(its.min(), its.max(), 0.0, mmds.max())
    parts = [_svg_header()]
    parts.extend(frame.axes_group("iteration", "mmd"))
    for idx, t in enumerate(traces):
        color = _PALETTE[idx % len(_PALETTE)]
        pts = " ".join(
            f"{frame.sx(r.iteration):.2f},{frame.sy(r.mmd):.2f}" for r in t.records
        )
        label = t.algorithm or f"trace{idx}"
        seed = "" if t.seed is None else f" seed {t.seed}"
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5">'
            f"<title>{label}{seed}</title></polyline>"
        )
    parts.append("</svg>")
    return "\n".join(parts)


def _scatter_svg(traces: list[Trace]) -> str:
    states = [t.final_state for t in traces]
    if any(s is None for s in states):
        raise ValueError("scatter2d needs traces with final states")
    if any(s.positions.shape[1] != 2 for s in states):
        dims = sorted({s.positions.shape[1] for s in states})
        raise ValueError(f"scatter2d requires 2-d positions, got dimensions {dims}")
    pos = np.vstack([s.positions for s in states])
    weights = np.concatenate([s.weights for s in states])
    pad_x = 0.05 * max(np.ptp(pos[:, 0]), 1e-9)
    pad_y = 0.05 * max(np.ptp(pos[:, 1]), 1e-9)
    frame = _Frame(
        pos[:, 0].min() - pad_x,
        pos[:, 0].max() + pad_x,
        pos[:, 1].min() - pad_y,
        pos[:, 1].max() + pad_y,
    )
    parts = [_svg_header()]
    parts.extend(frame.axes_group("coord 1", "coord 2"))
    w_max = max(float(np.abs(weights).max()), 1e-300)
    max_radius = 14.0
    for (x, y), w in zip(pos, weights):
        # marker area proportional to |weight|; sign encoded by fill
        radius = max(1.0, max_radius * np.sqrt(abs(w) / w_max))
        fill = _POSITIVE_FILL if w >= 0 else _NEGATIVE_FILL
        parts.append(
            f'<circle cx="{frame.sx(x):.2f}" cy="{frame.sy(y):.2f}" r="{radius:.2f}" '
            f'fill="{fill}" fill-opacity="0.75" data-weight="{float(w)!r}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)

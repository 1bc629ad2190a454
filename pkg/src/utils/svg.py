"""
Small deterministic SVG figures rendered from jinja2 templates.

Scatter plots of generated vs reference samples (with optional trajectory
polylines) and line plots of loss curves. Coordinates are formatted with a
fixed precision so equal inputs give byte-identical files.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from jinja2 import Environment

WIDTH = 480
HEIGHT = 360
MARGIN = 48
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]

_env = Environment(autoescape=True, trim_blocks=True, lstrip_blocks=True)

_FIGURE = _env.from_string(
    """<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{{ width }}" height="{{ height }}" viewBox="0 0 {{ width }} {{ height }}">
<rect x="0" y="0" width="{{ width }}" height="{{ height }}" fill="white"/>
<text x="{{ width / 2 }}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{{ title }}</text>
<rect x="{{ margin }}" y="{{ margin }}" width="{{ width - 2 * margin }}" height="{{ height - 2 * margin }}" fill="none" stroke="black"/>
{% for tick in xticks %}
<line x1="{{ tick.pos }}" y1="{{ height - margin }}" x2="{{ tick.pos }}" y2="{{ height - margin + 4 }}" stroke="black"/>
<text x="{{ tick.pos }}" y="{{ height - margin + 16 }}" text-anchor="middle" font-family="sans-serif" font-size="10">{{ tick.label }}</text>
{% endfor %}
{% for tick in yticks %}
<line x1="{{ margin - 4 }}" y1="{{ tick.pos }}" x2="{{ margin }}" y2="{{ tick.pos }}" stroke="black"/>
<text x="{{ margin - 6 }}" y="{{ tick.pos }}" text-anchor="end" font-family="sans-serif" font-size="10">{{ tick.label }}</text>
{% endfor %}
{% for line in polylines %}
<polyline points="{{ line.points }}" fill="none" stroke="{{ line.color }}" stroke-width="{{ line.width }}" stroke-opacity="{{ line.opacity }}"/>
{% endfor %}
{% for group in scatters %}
<g fill="{{ group.color }}" fill-opacity="0.5">
{% for p in group.points %}
<circle cx="{{ p[0] }}" cy="{{ p[1] }}" r="1.5"/>
{% endfor %}
</g>
{% endfor %}
{% for item in legend %}
<rect x="{{ width - margin - 110 }}" y="{{ margin + 6 + 16 * loop.index0 }}" width="10" height="10" fill="{{ item.color }}"/>
<text x="{{ width - margin - 94 }}" y="{{ margin + 15 + 16 * loop.index0 }}" font-family="sans-serif" font-size="11">{{ item.label }}</text>
{% endfor %}
</svg>
"""
)


@dataclass
class _Axes:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, arrays: Sequence[np.ndarray]) -> "_Axes":
        stacked = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1, 2) for a in arrays], axis=0)
        lo, hi = stacked.min(axis=0), stacked.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        return cls(lo=lo - 0.05 * span, hi=hi + 0.05 * span)

    def to_pixels(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        frac = (points - self.lo) / (self.hi - self.lo)
        px = MARGIN + frac[:, 0] * (WIDTH - 2 * MARGIN)
        py = HEIGHT - MARGIN - frac[:, 1] * (HEIGHT - 2 * MARGIN)
        return np.round(np.stack([px, py], axis=1), 2)

    def ticks(self, axis: int, count: int = 5) -> List[Dict[str, str]]:
        values = np.linspace(self.lo[axis], self.hi[axis], count)
        ticks = []
        for v in values:
            point = self.lo.copy()
            point[axis] = v
            pixel = self.to_pixels(point)[0, axis]
            ticks.append({"pos": f"{pixel:.2f}", "label": f"{v:.3g}"})
        return ticks


def _fmt(points: np.ndarray) -> List[Tuple[str, str]]:
    return [(f"{x:.2f}", f"{y:.2f}") for x, y in points]


def _render(title: str, axes: _Axes, scatters: list, polylines: list, legend: list) -> str:
    return _FIGURE.render(
        width=WIDTH,
        height=HEIGHT,
        margin=MARGIN,
        title=title,
        xticks=axes.ticks(0),
        yticks=axes.ticks(1),
        scatters=scatters,
        polylines=polylines,
        legend=legend,
    )


def scatter_svg(
    series: Dict[str, np.ndarray],
    title: str = "",
    trajectories: Optional[np.ndarray] = None,
    max_points: int = 2000,
    max_trajectories: int = 32,
) -> str:
    """Scatter named 2D point sets; ``trajectories`` (B, T, 2) are drawn as polylines."""
    arrays = [np.asarray(v, dtype=np.float64)[:, :2] for v in series.values()]
    if trajectories is not None:
        trajectories = np.asarray(trajectories, dtype=np.float64)[:max_trajectories, :, :2]
        arrays.append(trajectories.reshape(-1, 2))
    axes = _Axes.fit(arrays)

    scatters, legend = [], []
    for index, (label, points) in enumerate(series.items()):
        color = PALETTE[index % len(PALETTE)]
        points = np.asarray(points, dtype=np.float64)[:max_points, :2]
        scatters.append({"color": color, "points": _fmt(axes.to_pixels(points))})
        legend.append({"color": color, "label": label})

    polylines = []
    if trajectories is not None:
        for path in trajectories:
            pts = " ".join(f"{x},{y}" for x, y in _fmt(axes.to_pixels(path)))
            polylines.append({"points": pts, "color": "#555555", "width": 0.6, "opacity": 0.5})
    return _render(title, axes, scatters, polylines, legend)


def line_svg(series: Dict[str, Tuple[np.ndarray, np.ndarray]], title: str = "", log_y: bool = False) -> str:
    """Line plot of named (x, y) series, e.g. loss curves."""
    curves = {}
    for label, (x, y) in series.items():
        y = np.asarray(y, dtype=np.float64)
        if log_y:
            y = np.log10(np.maximum(y, 1e-12))
        curves[label] = np.stack([np.asarray(x, dtype=np.float64), y], axis=1)
    axes = _Axes.fit(list(curves.values()) or [np.zeros((1, 2))])

    polylines, legend = [], []
    for index, (label, points) in enumerate(curves.items()):
        color = PALETTE[index % len(PALETTE)]
        pts = " ".join(f"{x},{y}" for x, y in _fmt(axes.to_pixels(points)))
        polylines.append({"points": pts, "color": color, "width": 1.2, "opacity": 1.0})
        legend.append({"color": color, "label": label})
    return _render(title + (" (log10)" if log_y else ""), axes, [], polylines, legend)


def write_svg(text: str, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path

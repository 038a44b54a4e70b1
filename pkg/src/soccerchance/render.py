"""Pitch geometry and SVG output: Voronoi cells of the mixture centroids,
heatmaps of density surfaces and radar polygons of mixture weights.

SVG content is drawn in pitch units inside a group translated by
``(-X_MIN, 0)``, so a landmark at pitch ``(x, y)`` carries exactly
``cx="x" cy="y"``. The defended goal is at the top of the image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analytics import ReportTable, SurfaceGrid
from .errors import DomainError
from .ingest import X_MAX, X_MIN, Y_MAX, Y_MIN
from .spatial import Centroids

PITCH_BOUNDS = (X_MIN, X_MAX, Y_MIN, Y_MAX)

LANDMARKS = (
    ("center of defended goal", 0, 0),
    ("right goalpost", 15, 0),
    ("left goalpost", -15, 0),
    ("6-yard box, right corner", 37, 22),
    ("6-yard box, left corner", -37, 22),
    ("penalty spot", 0, 44),
    ("18-yard box, right corner", 81, 66),
    ("18-yard box, left corner", -81, 66),
    ("center spot", 0, 210),
)

# Sequential ramp: light yellow to dark purple, linear in RGB between stops.
# Low values are light, high values dark.
COLOR_RAMP = ("#ffffcc", "#fed976", "#fd8d3c", "#e31a1c", "#800026", "#3f007d")


# ---------------------------------------------------------------------------
# Voronoi


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area (positive for counter-clockwise vertices)."""
    p = np.asarray(poly, dtype=float)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _clip(poly: list[tuple[float, float]], a: np.ndarray, b: float) -> list[tuple[float, float]]:
    """Keep the part of a convex polygon with ``a . p <= b``."""
    out = []
    n = len(poly)
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        fp = a[0] * p[0] + a[1] * p[1] - b
        fq = a[0] * q[0] + a[1] * q[1] - b
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            t = fp / (fp - fq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def _centroid_points(centroids) -> np.ndarray:
    mu = centroids.mu if isinstance(centroids, Centroids) else np.asarray(centroids, dtype=float)
    mu = np.asarray(mu, dtype=float).reshape(-1, 2)
    if len(mu) == 0:
        raise DomainError("need at least one centroid")
    if len(np.unique(mu, axis=0)) != len(mu):
        raise DomainError("centroids must be distinct")
    return mu


def voronoi_cells(centroids, bounds: Sequence[float] = PITCH_BOUNDS) -> list[np.ndarray]:
    """Voronoi cell of each centroid clipped to the rectangle ``bounds``.

    Each cell is the rectangle cut by the bisector half-planes against every
    other centroid, returned as counter-clockwise vertices (possibly empty
    when a centroid's cell misses the rectangle). Boundary points lie in two
    cells; :func:`nearest_centroid` resolves them to the lower index.
    """
    mu = _centroid_points(centroids)
    x0, x1, y0, y1 = map(float, bounds)
    if not (x1 > x0 and y1 > y0):
        raise DomainError("bounds have zero area")
    rect = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    cells = []
    for i, c in enumerate(mu):
        poly = rect
        for k, o in enumerate(mu):
            if k == i or not poly:
                continue
            # |p - c|^2 <= |p - o|^2  <=>  2 (o - c) . p <= |o|^2 - |c|^2
            poly = _clip(poly, 2.0 * (o - c), float(o @ o - c @ c))
        cells.append(np.array(poly, dtype=float).reshape(-1, 2))
    return cells


def nearest_centroid(points, centroids) -> np.ndarray:
    """Index of the nearest centroid for each point; ties go to the lower index."""
    mu = _centroid_points(centroids)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    d = ((pts[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d, axis=1)


def points_in_convex_polygon(points, poly: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Containment test for a counter-clockwise convex polygon (edges count as inside)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3:
        return np.zeros(len(pts), dtype=bool)
    inside = np.ones(len(pts), dtype=bool)
    for k in range(len(poly)):
        p, q = poly[k], poly[(k + 1) % len(poly)]
        cross = (q[0] - p[0]) * (pts[:, 1] - p[1]) - (q[1] - p[1]) * (pts[:, 0] - p[0])
        inside &= cross >= -tol
    return inside


# ---------------------------------------------------------------------------
# colours


def ramp_color(t: float) -> str:
    """Colour for ``t`` in [0, 1] on :data:`COLOR_RAMP` (values outside are clipped)."""
    t = min(max(float(t), 0.0), 1.0) if math.isfinite(t) else 0.0
    stops = [tuple(int(h[i : i + 2], 16) for i in (1, 3, 5)) for h in COLOR_RAMP]
    pos = t * (len(stops) - 1)
    k = min(int(pos), len(stops) - 2)
    f = pos - k
    rgb = [round(a + f * (b - a)) for a, b in zip(stops[k], stops[k + 1])]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _normalise(values: np.ndarray) -> np.ndarray:
    """Scale to [0, 1] by the maximum; all-equal values map to 1, all-zero to 0."""
    top = float(np.max(values)) if values.size else 0.0
    return values / top if top > 0 else np.zeros_like(values)


# ---------------------------------------------------------------------------
# SVG


def _n(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return format(v, ".6f").rstrip("0").rstrip(".")


@dataclass(frozen=True)
class VoronoiMap:
    """Voronoi cells of a set of centroids with one weight per cell (e.g. mixture weights)."""

    centroids: Centroids
    weights: np.ndarray | None = None
    bounds: tuple = PITCH_BOUNDS


@dataclass(frozen=True)
class SvgStyle:
    margin: float = 20.0
    legend_width: float = 90.0
    line_color: str = "#333333"
    line_width: float = 1.0
    marker_radius: float = 2.0
    title: str = ""


def _pitch_outline(style: SvgStyle) -> list[str]:
    c, w = style.line_color, _n(style.line_width)
    attrs = f'fill="none" stroke="{c}" stroke-width="{w}"'
    out = [f'<g class="pitch" {attrs}>']
    out.append(f'<rect x="{_n(X_MIN)}" y="{_n(Y_MIN)}" width="{_n(X_MAX - X_MIN)}" height="{_n(Y_MAX - Y_MIN)}"/>')
    out.append(f'<line x1="{_n(X_MIN)}" y1="210" x2="{_n(X_MAX)}" y2="210"/>')
    for flip in (False, True):
        def y(v, flip=flip):
            return _n(Y_MAX - v if flip else v)
        # goal mouth, 6-yard and 18-yard boxes at each end
        out.append(f'<line class="goal" x1="-15" y1="{y(0)}" x2="15" y2="{y(0)}" stroke-width="{_n(3 * style.line_width)}"/>')
        out.append(f'<polyline points="-37,{y(0)} -37,{y(22)} 37,{y(22)} 37,{y(0)}"/>')
        out.append(f'<polyline points="-81,{y(0)} -81,{y(66)} 81,{y(66)} 81,{y(0)}"/>')
    out.append("</g>")
    r = _n(style.marker_radius)
    out.append(f'<g class="landmarks" fill="{c}">')
    for name, x, yv in LANDMARKS:
        out.append(f'<circle class="landmark" data-name="{name}" cx="{_n(x)}" cy="{_n(yv)}" r="{r}"/>')
    out.append("</g>")
    return out


def _legend(x: float, lo: float, hi: float, label: str, height: float = 200.0) -> list[str]:
    steps = 20
    out = [f'<g class="legend" font-family="sans-serif" font-size="9">', f"<text x=\"{_n(x)}\" y=\"10\">{label}</text>"]
    h = height / steps
    for k in range(steps):
        t = 1.0 - (k + 0.5) / steps
        out.append(f'<rect x="{_n(x)}" y="{_n(20 + k * h)}" width="14" height="{_n(h)}" fill="{ramp_color(t)}"/>')
    out.append(f'<text x="{_n(x + 18)}" y="{_n(28)}">{format(hi, ".3g")}</text>')
    out.append(f'<text x="{_n(x + 18)}" y="{_n(20 + height)}">{format(lo, ".3g")}</text>')
    out.append("</g>")
    return out


def _heatmap(surface: SurfaceGrid) -> tuple[list[str], float, float]:
    if not (surface.x_max > surface.x_min and surface.y_max > surface.y_min):
        raise DomainError("surface grid has zero area")
    t = _normalise(surface.values)
    dx = (surface.x_max - surface.x_min) / surface.nx
    dy = (surface.y_max - surface.y_min) / surface.ny
    out = ['<g class="heatmap" shape-rendering="crispEdges">']
    for i in range(surface.nx):
        for j in range(surface.ny):
            out.append(
                f'<rect x="{_n(surface.x_min + i * dx)}" y="{_n(surface.y_min + j * dy)}" '
                f'width="{_n(dx)}" height="{_n(dy)}" fill="{ramp_color(t[i, j])}"/>'
            )
    out.append("</g>")
    return out, float(surface.values.min()), float(surface.values.max())


def _voronoi(vmap: VoronoiMap, style: SvgStyle) -> tuple[list[str], float, float]:
    cells = voronoi_cells(vmap.centroids, vmap.bounds)
    w = np.ones(len(cells)) if vmap.weights is None else np.asarray(vmap.weights, dtype=float)
    if w.shape != (len(cells),):
        raise DomainError("need one weight per centroid")
    t = _normalise(w)
    out = ['<g class="voronoi">']
    for m, poly in enumerate(cells):
        if len(poly) < 3:
            continue
        pts = " ".join(f"{_n(x)},{_n(y)}" for x, y in poly)
        out.append(
            f'<polygon class="cell" data-component="{m + 1}" points="{pts}" fill="{ramp_color(t[m])}" '
            f'stroke="{style.line_color}" stroke-width="0.5"/>'
        )
    for m, (x, y) in enumerate(_centroid_points(vmap.centroids)):
        out.append(f'<text x="{_n(x)}" y="{_n(y)}" font-size="10" text-anchor="middle">{m + 1}</text>')
    out.append("</g>")
    return out, float(w.min()), float(w.max())


def _radar(table: ReportTable, style: SvgStyle) -> list[str]:
    """One closed polygon per table row over ``len(columns)`` spokes, radius = value / max."""
    vals = np.asarray(table.values, dtype=float)
    M = vals.shape[1]
    R = 100.0
    cx, cy = R + style.margin, R + style.margin
    top = float(vals.max()) if vals.size and vals.max() > 0 else 1.0
    ang = [2 * math.pi * m / M - math.pi / 2 for m in range(M)]
    out = ['<g class="radar" fill="none" font-family="sans-serif" font-size="9">']
    for m, a in enumerate(ang):
        ex, ey = cx + R * math.cos(a), cy + R * math.sin(a)
        out.append(f'<line x1="{_n(cx)}" y1="{_n(cy)}" x2="{_n(ex)}" y2="{_n(ey)}" stroke="#bbbbbb"/>')
        out.append(f'<text x="{_n(ex)}" y="{_n(ey)}">{table.col_labels[m]}</text>')
    n = len(table.row_labels)
    for i, label in enumerate(table.row_labels):
        pts = " ".join(
            f"{_n(cx + R * vals[i, m] / top * math.cos(a))},{_n(cy + R * vals[i, m] / top * math.sin(a))}"
            for m, a in enumerate(ang)
        )
        color = ramp_color((i + 1) / n)
        out.append(f'<polygon class="series" data-row="{label}" points="{pts}" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{_n(2 * R + 2 * style.margin)}" y="{_n(style.margin + 12 * i)}" fill="{color}">{label}</text>')
    out.append("</g>")
    return out


def emit_svg(content=None, style: SvgStyle | None = None) -> str:
    """Render a standalone SVG document.

    ``content`` is ``None`` (pitch outline only), a :class:`SurfaceGrid`
    (heatmap), a :class:`VoronoiMap` or :class:`Centroids` (cells filled by
    weight), or a :class:`ReportTable` (radar polygons, one per row). Pitch
    landmarks are drawn for every pitch-space output. Colours follow
    :data:`COLOR_RAMP` scaled to the maximum value. Output is deterministic.
    """
    style = style or SvgStyle()
    if isinstance(content, ReportTable):
        body = _radar(content, style)
        width, height = 2 * 100 + 2 * style.margin + style.legend_width, 2 * 100 + 2 * style.margin
        return _document(width, height, body, style.title)
    if isinstance(content, Centroids):
        content = VoronoiMap(content)
    layers: list[str] = []
    legend = None
    x_lo, x_hi, y_lo, y_hi = X_MIN, X_MAX, Y_MIN, Y_MAX
    if isinstance(content, SurfaceGrid):
        layers, lo, hi = _heatmap(content)
        legend = (lo, hi, "density")
        x_lo, x_hi = min(x_lo, content.x_min), max(x_hi, content.x_max)
        y_lo, y_hi = min(y_lo, content.y_min), max(y_hi, content.y_max)
    elif isinstance(content, VoronoiMap):
        layers, lo, hi = _voronoi(content, style)
        legend = (lo, hi, "weight")
    elif content is not None:
        raise DomainError(f"cannot render {type(content).__name__}")
    m = style.margin
    width = (x_hi - x_lo) + 2 * m + style.legend_width
    height = (y_hi - y_lo) + 2 * m
    body = [f'<g transform="translate({_n(m - x_lo)} {_n(m - y_lo)})">', *layers, *_pitch_outline(style), "</g>"]
    if legend is not None:
        body += _legend((x_hi - x_lo) + 2 * m + 10, legend[0], legend[1], legend[2])
    return _document(width, height, body, style.title)


def _document(width: float, height: float, body: list[str], title: str) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_n(width)}" height="{_n(height)}" '
        f'viewBox="0 0 {_n(width)} {_n(height)}">'
    )
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', head]
    if title:
        lines.append(f"<title>{title}</title>")
    lines.append('<rect width="100%" height="100%" fill="#ffffff"/>')
    lines += body
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


__all__ = [
    "COLOR_RAMP",
    "LANDMARKS",
    "PITCH_BOUNDS",
    "SvgStyle",
    "VoronoiMap",
    "emit_svg",
    "nearest_centroid",
    "points_in_convex_polygon",
    "polygon_area",
    "ramp_color",
    "voronoi_cells",
]

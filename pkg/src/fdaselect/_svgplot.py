"""Minimal hand-rolled SVG output for the p-value plot and effect-size heatmap.

SVG keeps plots text-diffable and lets tests parse colors straight from the
markup. The sequential colormap has monotone luminance so color order mirrors
value order.
"""

from __future__ import annotations

import numpy as np

from .errors import IoFailure

_ANCHORS = np.array(
    [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ],
    dtype=float,
)


def colormap(x: float) -> str:
    """Map x in [0, 1] to a hex color along a dark-to-bright sequential ramp."""
    x = min(max(float(x), 0.0), 1.0)
    pos = x * (len(_ANCHORS) - 1)
    i = min(int(pos), len(_ANCHORS) - 2)
    frac = pos - i
    rgb = (1.0 - frac) * _ANCHORS[i] + frac * _ANCHORS[i + 1]
    r, g, b = (int(round(v)) for v in rgb)
    return f"#{r:02x}{g:02x}{b:02x}"


def _fmt(x: float) -> str:
    return f"{x:.6g}"


class _Svg:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        ]

    def rect(self, x, y, w, h, fill, extra=""):
        self.parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" height="{_fmt(h)}" '
            f'fill="{fill}"{extra}/>'
        )

    def line(self, x1, y1, x2, y2, stroke="#000000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{stroke}" stroke-width="{width}"{d}/>'
        )

    def polyline(self, xs, ys, stroke, width=1.5, dash=None):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(xs, ys))
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width}"{d}/>'
        )

    def text(self, x, y, s, size=11, anchor="start", rotate=None):
        r = f' transform="rotate(-90 {_fmt(x)} {_fmt(y)})"' if rotate else ""
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" '
            f'font-family="sans-serif" text-anchor="{anchor}"{r}>{s}</text>'
        )

    def write(self, path):
        self.parts.append("</svg>")
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(self.parts))
        except OSError as exc:
            raise IoFailure(f"cannot write SVG to {path}: {exc}") from exc


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    return np.linspace(lo, hi, n)


def render_heatmap_svg(
    matrix: np.ndarray,
    ladder: np.ndarray,
    t: np.ndarray,
    symmetric: np.ndarray,
    path,
    title: str = "effect size map",
) -> None:
    """Heatmap with the window scale on the vertical axis (smallest at the
    bottom), a contour around the symmetric-window triangle, and a legend."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    n_rows, n_cols = matrix.shape
    left, right, top, bottom = 60, 90, 34, 44
    cell_w = max(3.0, min(10.0, 640.0 / n_cols))
    cell_h = max(3.0, min(10.0, 420.0 / n_rows))
    plot_w, plot_h = cell_w * n_cols, cell_h * n_rows
    svg = _Svg(int(left + plot_w + right), int(top + plot_h + bottom))
    svg.text(left, top - 12, title, size=13)

    finite = matrix[np.isfinite(matrix)]
    vmin = float(finite.min()) if finite.size else 0.0
    vmax = float(finite.max()) if finite.size else 1.0
    span = vmax - vmin

    for r in range(n_rows):
        y = top + plot_h - (r + 1) * cell_h  # row 0 at the bottom
        for c in range(n_cols):
            v = matrix[r, c]
            x = 1.0 if not np.isfinite(v) else (0.5 if span == 0 else (v - vmin) / span)
            svg.rect(left + c * cell_w, y, cell_w + 0.25, cell_h + 0.25, colormap(x))

    # contour of the symmetric-window (triangle) region
    a, b = float(t[0]), float(t[-1])
    t_span = b - a if b > a else 1.0

    def x_of(tt):
        return left + (tt - a) / t_span * plot_w

    def y_of_row(r):
        return top + plot_h - (r + 0.5) * cell_h

    for side in (+1, -1):
        xs, ys = [], []
        for r in range(n_rows):
            edge = a + ladder[r] / 2.0 if side > 0 else b - ladder[r] / 2.0
            if a <= edge <= b:
                xs.append(x_of(edge))
                ys.append(y_of_row(r))
        if len(xs) > 1:
            svg.polyline(xs, ys, "#ffffff", width=1.2, dash="4,3")

    # axes
    svg.line(left, top + plot_h, left + plot_w, top + plot_h)
    svg.line(left, top, left, top + plot_h)
    for tv in _ticks(a, b):
        svg.text(x_of(tv), top + plot_h + 16, _fmt(tv), anchor="middle")
    for r in np.linspace(0, n_rows - 1, min(5, n_rows)).astype(int):
        svg.text(left - 6, y_of_row(r) + 4, _fmt(float(ladder[r])), anchor="end", size=10)
    svg.text(left + plot_w / 2, top + plot_h + 34, "t", anchor="middle")
    svg.text(16, top + plot_h / 2, "window width", anchor="middle", rotate=True)

    # legend with numeric ticks
    lx = left + plot_w + 26
    steps = 32
    lh = plot_h * 0.8
    ly0 = top + (plot_h - lh) / 2
    for s in range(steps):
        frac = s / (steps - 1)
        svg.rect(lx, ly0 + lh - (s + 1) * lh / steps, 14, lh / steps + 0.5, colormap(frac))
    for frac in (0.0, 0.5, 1.0):
        svg.text(lx + 18, ly0 + lh - frac * lh + 4, _fmt(vmin + frac * span), size=10)
    svg.write(path)


_SERIES_COLORS = ("#1f3b73", "#b34700", "#2d7f5e", "#7a2048")


def render_pvalues_svg(
    t: np.ndarray,
    adjusted: np.ndarray,
    orders: tuple[int, ...],
    alpha_star: float,
    intervals,
    path,
    title: str = "adjusted p-value functions",
) -> None:
    """Adjusted p-value curves per derivative order with the corrected
    threshold line and the selected domain shaded."""
    adjusted = np.atleast_2d(adjusted)
    left, right, top, bottom = 56, 120, 34, 44
    plot_w, plot_h = 620.0, 300.0
    svg = _Svg(int(left + plot_w + right), int(top + plot_h + bottom))
    svg.text(left, top - 12, title, size=13)
    a, b = float(t[0]), float(t[-1])
    t_span = b - a if b > a else 1.0

    def x_of(tt):
        return left + (tt - a) / t_span * plot_w

    def y_of(p):
        return top + (1.0 - p) * plot_h

    for lo, hi in intervals:
        svg.rect(x_of(lo), top, max(x_of(hi) - x_of(lo), 1.0), plot_h, "#d9d9d9")

    svg.line(left, y_of(alpha_star), left + plot_w, y_of(alpha_star),
             stroke="#c02020", width=1.2, dash="6,4")
    svg.text(left + plot_w + 6, y_of(alpha_star) + 4, f"threshold {_fmt(alpha_star)}",
             size=10)

    for i, order in enumerate(orders):
        color = _SERIES_COLORS[i % len(_SERIES_COLORS)]
        svg.polyline([x_of(tt) for tt in t], [y_of(p) for p in adjusted[i]], color)
        svg.text(left + plot_w + 6, top + 14 + 14 * i, f"order {order}", size=10)
        svg.line(left + plot_w + 64, top + 10 + 14 * i, left + plot_w + 80,
                 top + 10 + 14 * i, stroke=color, width=2)

    svg.line(left, top + plot_h, left + plot_w, top + plot_h)
    svg.line(left, top, left, top + plot_h)
    for tv in _ticks(a, b):
        svg.text(x_of(tv), top + plot_h + 16, _fmt(tv), anchor="middle")
    for pv in (0.0, 0.25, 0.5, 0.75, 1.0):
        svg.text(left - 6, y_of(pv) + 4, _fmt(pv), anchor="end", size=10)
    svg.text(left + plot_w / 2, top + plot_h + 34, "t", anchor="middle")
    svg.text(16, top + plot_h / 2, "adjusted p", anchor="middle", rotate=True)
    svg.write(path)

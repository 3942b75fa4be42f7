"""Minimal self-contained SVG charts with deterministic output."""
from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 360
MARGIN = 50

LABEL_STYLE = {
    "regular": ("circle", "#555555"),
    "good_leverage": ("square", "#1f77b4"),
    "orthogonal_outlier": ("triangle", "#2ca02c"),
    "bad_leverage": ("cross", "#d62728"),
}


def _num(x: float) -> str:
    return f"{x:.2f}"


def _tick(x: float) -> str:
    return f"{x:.3g}"


class _Canvas:
    def __init__(self, width=WIDTH, height=HEIGHT):
        self.width, self.height = width, height
        self.parts: list = []

    def add(self, s: str):
        self.parts.append(s)

    def text(self, x, y, s, size=12, anchor="middle", rotate=None):
        rot = f' transform="rotate({rotate} {_num(x)} {_num(y)})"' if rotate is not None else ""
        self.add(
            f'<text x="{_num(x)}" y="{_num(y)}" font-family="sans-serif" font-size="{size}" '
            f'text-anchor="{anchor}"{rot}>{escape(s)}</text>'
        )

    def line(self, x1, y1, x2, y2, stroke="#000000", dash=None, width=1):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(
            f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
            f'stroke="{stroke}" stroke-width="{width}"{d}/>'
        )

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="#ffffff"/>\n'
        )
        return head + "\n".join(self.parts) + "\n</svg>\n"


class _Axes:
    """Linear map from data coordinates into a plotting box."""

    def __init__(self, canvas, box, xlim, ylim):
        self.c = canvas
        self.x0, self.y0, self.x1, self.y1 = box
        self.xlim = self._pad(xlim)
        self.ylim = self._pad(ylim)

    @staticmethod
    def _pad(lim):
        lo, hi = float(lim[0]), float(lim[1])
        if not hi > lo:
            lo, hi = lo - 0.5, hi + 0.5
        span = hi - lo
        return lo - 0.03 * span, hi + 0.03 * span

    def px(self, x):
        lo, hi = self.xlim
        return self.x0 + (x - lo) / (hi - lo) * (self.x1 - self.x0)

    def py(self, y):
        lo, hi = self.ylim
        return self.y1 - (y - lo) / (hi - lo) * (self.y1 - self.y0)

    def frame(self, xlabel, ylabel, title):
        c = self.c
        c.add(
            f'<rect x="{_num(self.x0)}" y="{_num(self.y0)}" width="{_num(self.x1 - self.x0)}" '
            f'height="{_num(self.y1 - self.y0)}" fill="none" stroke="#000000"/>'
        )
        for v in np.linspace(*self.xlim, 5):
            c.line(self.px(v), self.y1, self.px(v), self.y1 + 4)
            c.text(self.px(v), self.y1 + 16, _tick(v), size=10)
        for v in np.linspace(*self.ylim, 5):
            c.line(self.x0 - 4, self.py(v), self.x0, self.py(v))
            c.text(self.x0 - 6, self.py(v) + 3, _tick(v), size=10, anchor="end")
        c.text((self.x0 + self.x1) / 2, self.y1 + 34, xlabel)
        c.text(self.x0 - 38, (self.y0 + self.y1) / 2, ylabel, rotate=-90)
        c.text((self.x0 + self.x1) / 2, self.y0 - 12, title, size=14)


def _marker(c, shape, x, y, color, r=3.0):
    if shape == "circle":
        c.add(f'<circle cx="{_num(x)}" cy="{_num(y)}" r="{_num(r)}" fill="none" stroke="{color}"/>')
    elif shape == "square":
        c.add(
            f'<rect x="{_num(x - r)}" y="{_num(y - r)}" width="{_num(2 * r)}" height="{_num(2 * r)}" '
            f'fill="none" stroke="{color}"/>'
        )
    elif shape == "triangle":
        pts = f"{_num(x)},{_num(y - r)} {_num(x - r)},{_num(y + r)} {_num(x + r)},{_num(y + r)}"
        c.add(f'<polygon points="{pts}" fill="none" stroke="{color}"/>')
    else:
        c.line(x - r, y - r, x + r, y + r, stroke=color)
        c.line(x - r, y + r, x + r, y - r, stroke=color)


def soda_svg(sd, od, sd_cut, od_cut, labels, title="SODA plot") -> str:
    sd, od = np.asarray(sd, dtype=float), np.asarray(od, dtype=float)
    c = _Canvas()
    ax = _Axes(
        c,
        (MARGIN + 10, MARGIN, WIDTH - 20, HEIGHT - MARGIN),
        (0.0, max(sd.max(initial=0.0), sd_cut)),
        (0.0, max(od.max(initial=0.0), od_cut)),
    )
    ax.frame("score distance", "orthogonal distance", title)
    c.line(ax.px(sd_cut), ax.y0, ax.px(sd_cut), ax.y1, stroke="#888888", dash="4,3")
    c.line(ax.x0, ax.py(od_cut), ax.x1, ax.py(od_cut), stroke="#888888", dash="4,3")
    for s, o, lab in zip(sd, od, labels):
        shape, color = LABEL_STYLE[lab]
        _marker(c, shape, ax.px(s), ax.py(o), color)
    # legend
    y = MARGIN + 10
    for lab, (shape, color) in LABEL_STYLE.items():
        _marker(c, shape, WIDTH - 150, y, color)
        c.text(WIDTH - 140, y + 4, lab.replace("_", " "), size=10, anchor="start")
        y += 14
    return c.render()


def _blend(t: float) -> str:
    # white -> red for positive, white -> blue for negative
    t = float(np.clip(t, -1.0, 1.0))
    if t >= 0:
        r, g, b = 255, round(255 * (1 - t)), round(255 * (1 - t))
    else:
        r, g, b = round(255 * (1 + t)), round(255 * (1 + t)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(values, title="Cellwise contributions") -> str:
    V = np.asarray(values, dtype=float)
    rows, cols = V.shape
    cell = max(12, min(40, (WIDTH - 2 * MARGIN) // max(cols, 1)))
    width = 2 * MARGIN + cols * cell
    height = 2 * MARGIN + rows * cell + 20
    c = _Canvas(width, height)
    c.text(width / 2, MARGIN - 20, title, size=14)
    scale = np.abs(V).max() if V.size else 0.0
    scale = scale if scale > 0 else 1.0
    for i in range(rows):
        c.text(MARGIN - 6, MARGIN + i * cell + cell / 2 + 4, str(i + 1), size=10, anchor="end")
        for j in range(cols):
            c.add(
                f'<rect x="{MARGIN + j * cell}" y="{MARGIN + i * cell}" width="{cell}" height="{cell}" '
                f'fill="{_blend(V[i, j] / scale)}" stroke="#dddddd"/>'
            )
    for j in range(cols):
        c.text(MARGIN + j * cell + cell / 2, MARGIN - 4, str(j + 1), size=10)
    c.text(width / 2, MARGIN + rows * cell + 18, f"colour scale: |max| = {_tick(scale)}", size=10)
    return c.render()


def scree_svg(panels: Sequence, title="Scree plot") -> str:
    """Side-by-side eigenvalue line plots; ``panels`` holds ``(name, values)`` pairs."""
    k = len(panels)
    width = WIDTH * k // 2 + MARGIN
    c = _Canvas(width, HEIGHT)
    c.text(width / 2, 18, title, size=14)
    pw = (width - MARGIN) / k
    for p, (name, vals) in enumerate(panels):
        vals = np.asarray(vals, dtype=float)
        idx = np.arange(1, vals.size + 1)
        x0 = MARGIN + p * pw
        ax = _Axes(c, (x0 + 10, MARGIN, x0 + pw - 20, HEIGHT - MARGIN),
                   (1.0, max(vals.size, 2)), (0.0, vals.max(initial=1.0)))
        ax.frame("index", "eigenvalue", name)
        pts = " ".join(f"{_num(ax.px(i))},{_num(ax.py(v))}" for i, v in zip(idx, vals))
        c.add(f'<polyline points="{pts}" fill="none" stroke="#1f77b4"/>')
        for i, v in zip(idx, vals):
            c.add(f'<circle cx="{_num(ax.px(i))}" cy="{_num(ax.py(v))}" r="2.5" fill="#1f77b4"/>')
    return c.render()

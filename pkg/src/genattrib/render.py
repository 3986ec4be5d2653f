"""Raster rendering of curves, histograms and image grids.

Everything is drawn with Pillow's built-in bitmap font so identical inputs
give identical PNG bytes on any machine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .exceptions import UsageError
from .perturb import to_uint8

PALETTE = [(31, 119, 180), (214, 39, 40), (44, 160, 44), (255, 127, 14),
           (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127)]
BLACK, GREY, WHITE = (0, 0, 0), (170, 170, 170), (255, 255, 255)
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 48, 16, 24, 36


@lru_cache(maxsize=1)
def _font():
    return ImageFont.load_default_imagefont()


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]


@dataclass
class ChartSpec:
    series: list
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    diagonal: bool = False
    xlim: tuple = (0.0, 1.0)
    ylim: tuple = (0.0, 1.0)
    width: int = 400
    height: int = 400

    def validate(self):
        if not self.series:
            raise UsageError("chart needs at least one series")
        for s in self.series:
            if len(s.x) == 0 or len(s.x) != len(s.y):
                raise UsageError(f"series {s.label!r} is empty or ragged")
        if not (self.xlim[1] > self.xlim[0] and self.ylim[1] > self.ylim[0]):
            raise UsageError("axis limits must be increasing")
        return self


class _Axes:
    def __init__(self, w, h, xlim, ylim):
        self.x0, self.y0 = MARGIN_L, MARGIN_T
        self.x1, self.y1 = w - MARGIN_R, h - MARGIN_B
        self.xlim, self.ylim = xlim, ylim

    def px(self, x, y):
        fx = (x - self.xlim[0]) / (self.xlim[1] - self.xlim[0])
        fy = (y - self.ylim[0]) / (self.ylim[1] - self.ylim[0])
        return (self.x0 + fx * (self.x1 - self.x0), self.y1 - fy * (self.y1 - self.y0))


def _frame(draw, ax, spec_title, xlabel, ylabel, w, h, ticks=5):
    font = _font()
    draw.rectangle([ax.x0, ax.y0, ax.x1, ax.y1], outline=BLACK)
    for k in range(ticks + 1):
        fx = ax.xlim[0] + k * (ax.xlim[1] - ax.xlim[0]) / ticks
        fy = ax.ylim[0] + k * (ax.ylim[1] - ax.ylim[0]) / ticks
        px, _ = ax.px(fx, ax.ylim[0])
        _, py = ax.px(ax.xlim[0], fy)
        draw.line([px, ax.y1, px, ax.y1 + 3], fill=BLACK)
        draw.line([ax.x0 - 3, py, ax.x0, py], fill=BLACK)
        draw.text((px - 8, ax.y1 + 5), f"{fx:.3g}", fill=BLACK, font=font)
        draw.text((2, py - 5), f"{fy:.3g}", fill=BLACK, font=font)
    if spec_title:
        draw.text((ax.x0, 6), spec_title, fill=BLACK, font=font)
    if xlabel:
        draw.text(((ax.x0 + ax.x1) // 2 - 3 * len(xlabel), h - 14), xlabel, fill=BLACK, font=font)
    if ylabel:
        draw.text((2, ax.y0 - 14 if not spec_title else ax.y0 - 2), ylabel, fill=BLACK, font=font)


def draw_chart(spec: ChartSpec) -> Image.Image:
    spec.validate()
    img = Image.new("RGB", (spec.width, spec.height), WHITE)
    draw = ImageDraw.Draw(img)
    ax = _Axes(spec.width, spec.height, spec.xlim, spec.ylim)
    _frame(draw, ax, spec.title, spec.xlabel, spec.ylabel, spec.width, spec.height)
    if spec.diagonal:
        a, b = ax.px(spec.xlim[0], spec.ylim[0]), ax.px(spec.xlim[1], spec.ylim[1])
        _dashed(draw, a, b, GREY)
    font = _font()
    for k, s in enumerate(spec.series):
        colour = PALETTE[k % len(PALETTE)]
        pts = [ax.px(float(x), float(y)) for x, y in zip(s.x, s.y)]
        if len(pts) == 1:
            x, y = pts[0]
            draw.ellipse([x - 2, y - 2, x + 2, y + 2], fill=colour)
        else:
            draw.line(pts, fill=colour, width=2)
        ly = ax.y1 - 14 * (len(spec.series) - k)
        draw.line([ax.x1 - 110, ly + 5, ax.x1 - 95, ly + 5], fill=colour, width=2)
        draw.text((ax.x1 - 90, ly), s.label[:16], fill=BLACK, font=font)
    return img


def _dashed(draw, a, b, colour, dash=6):
    length = math.hypot(b[0] - a[0], b[1] - a[1])
    n = max(1, int(length // dash))
    for k in range(0, n, 2):
        t0, t1 = k / n, min(1.0, (k + 1) / n)
        draw.line([a[0] + t0 * (b[0] - a[0]), a[1] + t0 * (b[1] - a[1]),
                   a[0] + t1 * (b[0] - a[0]), a[1] + t1 * (b[1] - a[1])], fill=colour)


def _save(img: Image.Image, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    img.save(tmp, format="PNG")
    tmp.replace(path)
    return path


def render_chart(spec: ChartSpec, path) -> Path:
    return _save(draw_chart(spec), path)


def roc_chart(curves, title="ROC") -> ChartSpec:
    """Chart spec overlaying ROC curves with the chance diagonal."""
    series = [Series(f"{c.label or 'roc'} {c.auc:.3f}", c.fpr, c.tpr) for c in curves]
    return ChartSpec(series, "FPR", "TPR", title, diagonal=True)


def draw_hist(edges, counts, title="", xlabel="", width=400, height=300) -> Image.Image:
    edges = np.asarray(edges, dtype=np.float64)
    counts = np.asarray(counts)
    if counts.size == 0 or edges.size != counts.size + 1:
        raise UsageError("histogram needs n+1 edges for n > 0 counts")
    lo, hi = float(edges[0]), float(edges[-1])
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    top = max(1, int(counts.max()))
    img = Image.new("RGB", (width, height), WHITE)
    draw = ImageDraw.Draw(img)
    ax = _Axes(width, height, (lo, hi), (0.0, float(top)))
    _frame(draw, ax, title, xlabel, "count", width, height, ticks=4)
    for l, r, c in zip(edges[:-1], edges[1:], counts):
        if c <= 0:
            continue
        (x0, y0), (x1, _) = ax.px(l, c), ax.px(r, 0)
        draw.rectangle([x0, y0, max(x0, x1 - 1), ax.y1], fill=PALETTE[0], outline=BLACK)
    return img


def render_hist(edges, counts, path, title="", xlabel="") -> Path:
    return _save(draw_hist(edges, counts, title, xlabel), path)


@dataclass
class GridLayout:
    rows: int
    cols: int
    cell_h: int
    cell_w: int
    scale: int = 1
    pad: int = 2
    label_w: int = 0

    @property
    def size(self):
        w = self.label_w + self.cols * self.cell_w * self.scale + (self.cols + 1) * self.pad
        h = self.rows * self.cell_h * self.scale + (self.rows + 1) * self.pad
        return w, h


def draw_grid(images, rows: int, labels: Optional[Sequence[str]] = None, shape=(28, 28),
              scale: int = 1, pad: int = 2) -> Image.Image:
    """Tile images row-major into ``rows`` rows; ``labels`` name each row."""
    imgs = [np.asarray(i, dtype=np.float64).reshape(shape) for i in images]
    if not imgs:
        raise UsageError("grid needs at least one image")
    if rows < 1:
        raise UsageError("rows must be >= 1")
    if labels is not None and len(labels) != rows:
        raise UsageError(f"{len(labels)} labels for {rows} rows")
    cols = math.ceil(len(imgs) / rows)
    label_w = 0 if not labels else 6 * max(len(l) for l in labels) + 4
    lay = GridLayout(rows, cols, shape[0], shape[1], scale, pad, label_w)
    canvas = Image.new("L", lay.size, 255)
    draw = ImageDraw.Draw(canvas)
    step_x, step_y = shape[1] * scale + pad, shape[0] * scale + pad
    for k, a in enumerate(imgs):
        r, c = divmod(k, cols)
        tile = Image.fromarray(to_uint8(a))
        if scale != 1:
            tile = tile.resize((shape[1] * scale, shape[0] * scale), Image.NEAREST)
        canvas.paste(tile, (label_w + pad + c * step_x, pad + r * step_y))
    for r, text in enumerate(labels or []):
        draw.text((2, pad + r * step_y + (shape[0] * scale) // 2 - 5), text, fill=0, font=_font())
    return canvas


def render_grid(images, rows: int, path, labels=None, shape=(28, 28), scale: int = 1,
                pad: int = 2) -> Path:
    return _save(draw_grid(images, rows, labels, shape, scale, pad), path)

"""Deterministic file emitters: P5 heatmaps, self-contained SVG line plots,
and fixed-format CSV. No timestamps or random ids ever enter the bytes, so
identical inputs produce identical files."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import RejectedInputError
from .linalg import as_matrix
from .metrics import AttnMatrix

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#ff7f0e",
    "#9467bd",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)


def fmt(v: float) -> str:
    """Fixed 12-significant-digit decimal used in every CSV/SVG body."""
    if not math.isfinite(v):
        raise RejectedInputError(f"refusing to serialize non-finite value {v}")
    return format(float(v), ".12g")


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    """CSV with a header row; every numeric cell goes through fmt()."""
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        cells = [cell if isinstance(cell, str) else fmt(cell) for cell in row]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def emit_heatmap(a, path) -> Path:
    """8-bit P5 (binary PGM) image of a matrix, min-max scaled."""
    m = a.matrix if isinstance(a, AttnMatrix) else as_matrix(a)
    rows, cols = m.shape
    lo = float(m.min())
    hi = float(m.max())
    if hi > lo:
        scaled = np.rint((m - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.full_like(m, 128.0)
    data = scaled.astype(np.uint8).tobytes()
    path = Path(path)
    path.write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + data)
    return path


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def emit_line_plot(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    path,
    title: str = "",
    x_label: str = "",
    y_label: str = "",
) -> Path:
    """Self-contained SVG with axes, tick labels, a legend, and one polyline
    per (name, xs, ys) series."""
    if len(series) == 0:
        raise RejectedInputError("need at least one series to plot")
    for name, xs, ys in series:
        if len(xs) != len(ys) or len(xs) < 2:
            raise RejectedInputError(f"series {name!r} needs >= 2 matching points")
        if not all(math.isfinite(float(v)) for v in list(xs) + list(ys)):
            raise RejectedInputError(f"series {name!r} contains non-finite values")

    width, height = 720, 480
    left, right, top, bottom = 72, 24, 40, 56
    pw, ph = width - left - right, height - top - bottom
    x_lo = min(min(float(v) for v in xs) for _, xs, _ in series)
    x_hi = max(max(float(v) for v in xs) for _, xs, _ in series)
    y_lo = min(min(float(v) for v in ys) for _, _, ys in series)
    y_hi = max(max(float(v) for v in ys) for _, _, ys in series)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.04 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(v: float) -> float:
        return left + (v - x_lo) / (x_hi - x_lo) * pw

    def sy(v: float) -> float:
        return top + ph - (v - y_lo) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
        'stroke="#333333" stroke-width="1"/>',
    ]
    if title:
        out.append(
            f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{escape(title)}</text>'
        )
    for tick in _ticks(x_lo, x_hi):
        px = sx(tick)
        out.append(
            f'<line x1="{px:.2f}" y1="{top + ph}" x2="{px:.2f}" y2="{top + ph + 5}" '
            'stroke="#333333" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{px:.2f}" y="{top + ph + 20}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{fmt(round(tick, 10))}</text>'
        )
    for tick in _ticks(y_lo, y_hi):
        py = sy(tick)
        out.append(
            f'<line x1="{left - 5}" y1="{py:.2f}" x2="{left}" y2="{py:.2f}" '
            'stroke="#333333" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{left - 9}" y="{py + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{fmt(round(tick, 10))}</text>'
        )
    if x_label:
        out.append(
            f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{escape(x_label)}</text>'
        )
    if y_label:
        out.append(
            f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13" '
            f'transform="rotate(-90 18 {top + ph / 2:.1f})">{escape(y_label)}</text>'
        )
    for idx, (name, xs, ys) in enumerate(series):
        color = PALETTE[idx % len(PALETTE)]
        points = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}" for x, y in zip(xs, ys))
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.7" '
            f'points="{points}"/>'
        )
        ly = top + 16 + 16 * idx
        out.append(
            f'<line x1="{left + pw - 130}" y1="{ly}" x2="{left + pw - 108}" y2="{ly}" '
            f'stroke="{color}" stroke-width="1.7"/>'
        )
        out.append(
            f'<text x="{left + pw - 102}" y="{ly + 4}" font-family="sans-serif" '
            f'font-size="11">{escape(str(name))}</text>'
        )
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path

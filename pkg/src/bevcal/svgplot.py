"""Dependency-free SVG rendering: reliability diagrams and scene overlays.

Reliability bars carry slope-1 "roof" tops through the (mean confidence,
empirical frequency) point, so the vertical gap to the diagonal stays
readable across the whole bar; a log-scaled count histogram sits beneath.
The scene renderer draws the grid as natural-log colors clipped at a floor,
with location ellipses, dashed region rectangles, and the ego cell marked.
"""

from __future__ import annotations

import math

import numpy as np

from .core import DetectedObject, FrameRecord
from .evaluate import ReliabilityReport
from .uncertainty import RegionSpec, mahalanobis_threshold

_COLOR_STOPS = ((13, 8, 135), (204, 71, 120), (240, 249, 33))


def _esc(text: str) -> str:
    return (
        str(text)
        .replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def _ramp(t: float) -> str:
    t = min(max(t, 0.0), 1.0)
    if t < 0.5:
        a, b, u = _COLOR_STOPS[0], _COLOR_STOPS[1], t * 2.0
    else:
        a, b, u = _COLOR_STOPS[1], _COLOR_STOPS[2], (t - 0.5) * 2.0
    return "#%02x%02x%02x" % tuple(round(a[i] + (b[i] - a[i]) * u) for i in range(3))


def render_reliability_svg(
    report: ReliabilityReport,
    histogram,
    path,
    title: str = "",
    log_axes: bool = False,
    log_floor: float = 1e-4,
) -> None:
    """Write a reliability diagram with tilted-roof bars and a count panel.

    histogram gives the per-bin instance counts (usually report.counts()).
    With log_axes both probability axes are log-scaled and values below
    log_floor are clamped to the axis minimum.
    """
    left, top, size = 60.0, 34.0, 380.0
    hist_h, gap = 96.0, 40.0
    width = left + size + 24.0
    height = top + size + gap + hist_h + 40.0

    if log_axes:
        span = -math.log10(log_floor)

        def t(v: float) -> float:
            return (math.log10(max(v, log_floor)) + span) / span

    else:

        def t(v: float) -> float:
            return min(max(v, 0.0), 1.0)

    def px(v: float) -> float:
        return left + t(v) * size

    def py(v: float) -> float:
        return top + size - t(v) * size

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    if title:
        parts.append(
            f'<text x="{left + size / 2:.1f}" y="20" text-anchor="middle" '
            f'font-size="13">{_esc(title)}</text>'
        )

    # Diagonal reference (straight in both linear and log-log space).
    parts.append(
        f'<line x1="{px(log_floor if log_axes else 0):.1f}" y1="{py(log_floor if log_axes else 0):.1f}" '
        f'x2="{px(1):.1f}" y2="{py(1):.1f}" stroke="#222" stroke-dasharray="5 4"/>'
    )

    for b in report.bins:
        if b.count == 0 or not np.isfinite(b.lo):
            continue
        lo, hi = b.lo, b.hi
        if hi <= lo:
            hi = lo + 1e-9
        roof_lo = b.empirical_frequency + (lo - b.mean_confidence)
        roof_hi = b.empirical_frequency + (hi - b.mean_confidence)
        pts = (
            f"{px(lo):.1f},{py(0 if not log_axes else log_floor):.1f} "
            f"{px(lo):.1f},{py(roof_lo):.1f} "
            f"{px(hi):.1f},{py(roof_hi):.1f} "
            f"{px(hi):.1f},{py(0 if not log_axes else log_floor):.1f}"
        )
        parts.append(
            f'<polygon points="{pts}" fill="#4e79a7" fill-opacity="0.75" stroke="#2f4b6e"/>'
        )
    for b in report.bins:
        if b.count == 0 or not np.isfinite(b.mean_confidence):
            continue
        parts.append(
            f'<circle cx="{px(b.mean_confidence):.1f}" cy="{py(b.empirical_frequency):.1f}" '
            'r="3.2" fill="#d62728"/>'
        )

    # Axes and ticks.
    parts.append(
        f'<rect x="{left:.1f}" y="{top:.1f}" width="{size:.1f}" height="{size:.1f}" '
        'fill="none" stroke="#444"/>'
    )
    ticks = (
        [10.0**e for e in range(int(math.log10(log_floor)), 1)] if log_axes else [0.0, 0.25, 0.5, 0.75, 1.0]
    )
    for v in ticks:
        label = f"{v:g}"
        parts.append(
            f'<text x="{px(v):.1f}" y="{top + size + 14:.1f}" font-size="9" '
            f'text-anchor="middle">{label}</text>'
        )
        parts.append(
            f'<text x="{left - 6:.1f}" y="{py(v) + 3:.1f}" font-size="9" '
            f'text-anchor="end">{label}</text>'
        )
    parts.append(
        f'<text x="{left + size / 2:.1f}" y="{top + size + 28:.1f}" font-size="11" '
        'text-anchor="middle">predicted probability</text>'
    )

    # Histogram panel, log-scaled counts.
    counts = list(histogram)
    hist_top = top + size + gap
    cmax = max((c for c in counts), default=0)
    denom = math.log10(cmax + 1.0) if cmax > 0 else 1.0
    for b, c in zip(report.bins, counts):
        if c <= 0 or not np.isfinite(b.lo):
            continue
        lo, hi = b.lo, b.hi
        if hi <= lo:
            hi = lo + 1e-9
        h = hist_h * math.log10(c + 1.0) / denom
        x0, x1 = px(lo), px(hi)
        parts.append(
            f'<rect x="{x0:.1f}" y="{hist_top + hist_h - h:.1f}" width="{max(x1 - x0, 1.0):.1f}" '
            f'height="{h:.1f}" fill="#9aa9bd" stroke="#667"/>'
        )
    parts.append(
        f'<rect x="{left:.1f}" y="{hist_top:.1f}" width="{size:.1f}" height="{hist_h:.1f}" '
        'fill="none" stroke="#444"/>'
    )
    parts.append(
        f'<text x="{left + size / 2:.1f}" y="{hist_top + hist_h + 24:.1f}" font-size="11" '
        'text-anchor="middle">count per bin (log scale)</text>'
    )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def render_scene_svg(
    frame: FrameRecord,
    detections: list[DetectedObject],
    regions: list[RegionSpec],
    clip_log: float,
    path,
    timestep: int = 0,
    ellipse_mass: float = 0.99,
    cell_px: float = 3.0,
) -> None:
    """Render one timestep's grid with ellipse/region/ego overlays.

    Cell colors follow ln(p) clipped below at clip_log. Rows are drawn with
    forward (+row) pointing up.
    """
    meta = frame.meta
    h, w = meta.height_cells, meta.width_cells
    width_px = w * cell_px
    height_px = h * cell_px

    def sx(col: float) -> float:
        return (col + 0.5) * cell_px

    def sy(row: float) -> float:
        return (h - 1 - row + 0.5) * cell_px

    cells = frame.grids[timestep].cells
    with np.errstate(divide="ignore"):
        lv = np.log(cells)
    lv = np.clip(lv, clip_log, 0.0)
    levels = np.round((lv - clip_log) / (-clip_log) * 63.0).astype(np.int64)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_px:.0f}" height="{height_px:.0f}">'
    ]
    # Run-length encode each display row to keep the file compact.
    palette = [_ramp(i / 63.0) for i in range(64)]
    for r in range(h):
        y = (h - 1 - r) * cell_px
        row = levels[r]
        c0 = 0
        while c0 < w:
            c1 = c0 + 1
            while c1 < w and row[c1] == row[c0]:
                c1 += 1
            parts.append(
                f'<rect x="{c0 * cell_px:.1f}" y="{y:.1f}" width="{(c1 - c0) * cell_px:.1f}" '
                f'height="{cell_px:.1f}" fill="{palette[int(row[c0])]}"/>'
            )
            c0 = c1

    thr = mahalanobis_threshold(ellipse_mass)
    for det in detections:
        g = det.location.get(timestep)
        if g is None:
            continue
        evals, evecs = np.linalg.eigh(g.cov)
        r1 = math.sqrt(max(evals[1], 0.0) * thr) * cell_px
        r0 = math.sqrt(max(evals[0], 0.0) * thr) * cell_px
        major = evecs[:, 1]  # (d_row, d_col) of the larger eigenvalue
        angle = math.degrees(math.atan2(-major[0], major[1]))
        cx, cy = sx(g.mean[1]), sy(g.mean[0])
        parts.append(
            f'<ellipse cx="{cx:.1f}" cy="{cy:.1f}" rx="{r1:.1f}" ry="{r0:.1f}" '
            f'transform="rotate({angle:.1f} {cx:.1f} {cy:.1f})" '
            'fill="none" stroke="#00e5ff" stroke-width="1.5"/>'
        )

    for region in regions:
        r_lo = meta.ego_row + region.forward_min / meta.cell_size_m
        r_hi = meta.ego_row + region.forward_max / meta.cell_size_m
        c_lo = meta.ego_col + region.lateral_min / meta.cell_size_m
        c_hi = meta.ego_col + region.lateral_max / meta.cell_size_m
        x = sx(c_lo) - 0.5 * cell_px
        y = sy(r_hi) - 0.5 * cell_px
        parts.append(
            f'<rect x="{x:.1f}" y="{y:.1f}" width="{(c_hi - c_lo) * cell_px:.1f}" '
            f'height="{(r_hi - r_lo) * cell_px:.1f}" fill="none" stroke="#ff3333" '
            'stroke-width="1.5" stroke-dasharray="6 4"/>'
        )

    parts.append(
        f'<rect x="{sx(meta.ego_col) - cell_px / 2:.1f}" y="{sy(meta.ego_row) - cell_px / 2:.1f}" '
        f'width="{cell_px:.1f}" height="{cell_px:.1f}" fill="#1f5bff" stroke="white" '
        'stroke-width="0.6"/>'
    )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")

"""Object-level probabilistic outputs computed from grids and locations.

Presence is the probability mass of the grid inside a location's
high-density ellipse, normalized by the fixed object pixel size and clipped
at 1. The undetected-object-ahead probability sums what remains of an
ego-relative region after all detection ellipses are removed. Location
quantiles split the 2D location Gaussian into 1D direction/distance
marginals along the ego-to-object axis and evaluate where the annotation
center lands on each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AnnotatedObject, DetectedObject, Gaussian2D, GridMeta, ProbGrid, ValidationError


@dataclass(frozen=True)
class PresenceConfig:
    ellipse_mass: float = 0.99
    shape_pixels: float = 5.0

    def __post_init__(self):
        if not (0.0 < self.ellipse_mass < 1.0):
            raise ValidationError("ellipse_mass must be in (0, 1)")
        if self.shape_pixels <= 0:
            raise ValidationError("shape_pixels must be positive")


@dataclass(frozen=True)
class RegionSpec:
    """Axis-aligned rectangle in meters relative to the ego vehicle.

    Forward is the +row direction; lateral is the +col direction. A cell
    belongs to the region iff its center lies in the closed rectangle.
    """

    name: str
    forward_min: float
    forward_max: float
    lateral_min: float
    lateral_max: float

    def __post_init__(self):
        if not (self.forward_min < self.forward_max):
            raise ValidationError("forward_min must be below forward_max")
        if not (self.lateral_min < self.lateral_max):
            raise ValidationError("lateral_min must be below lateral_max")


@dataclass(frozen=True)
class LocationQuantiles:
    detection_id: str
    timestep: int
    q_direction: float
    q_distance: float

    def __post_init__(self):
        if not (0.0 <= self.q_direction <= 1.0 and 0.0 <= self.q_distance <= 1.0):
            raise ValidationError("quantiles must lie in [0, 1]")


def mahalanobis_threshold(mass: float) -> float:
    """Chi-square(2 dof) quantile at the given mass: -2 ln(1 - mass)."""
    return -2.0 * math.log1p(-mass)


def std_normal_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def ellipse_cells(g: Gaussian2D, mass: float, meta: GridMeta) -> set[tuple[int, int]]:
    """All grid cells whose centers fall inside the mass-level ellipse of g."""
    if not (0.0 < mass < 1.0):
        raise ValidationError("mass must be in (0, 1)")
    thr = mahalanobis_threshold(mass)
    a = g.cov[0, 0]
    b = g.cov[0, 1]
    d = g.cov[1, 1]
    det = a * d - b * b
    half_r = math.sqrt(thr * a)
    half_c = math.sqrt(thr * d)
    r0 = max(0, math.ceil(g.mean[0] - half_r))
    r1 = min(meta.height_cells - 1, math.floor(g.mean[0] + half_r))
    c0 = max(0, math.ceil(g.mean[1] - half_c))
    c1 = min(meta.width_cells - 1, math.floor(g.mean[1] + half_c))
    if r1 < r0 or c1 < c0:
        return set()
    dr = np.arange(r0, r1 + 1, dtype=np.float64)[:, None] - g.mean[0]
    dc = np.arange(c0, c1 + 1, dtype=np.float64)[None, :] - g.mean[1]
    maha = (dr * dr * d - 2.0 * dr * dc * b + dc * dc * a) / det
    rows, cols = np.nonzero(maha <= thr)
    return {(int(r) + r0, int(c) + c0) for r, c in zip(rows, cols)}


def _mass_in_cells(grid: ProbGrid, cells) -> float:
    total = 0.0
    arr = grid.cells
    for r, c in cells:
        total += float(arr[r, c])
    return total


def presence_probability(grid: ProbGrid, g: Gaussian2D, config: PresenceConfig) -> float:
    """Grid mass inside the location ellipse over shape_pixels, clipped at 1."""
    cells = ellipse_cells(g, config.ellipse_mass, grid.meta)
    if not cells:
        return 0.0
    return min(1.0, _mass_in_cells(grid, cells) / config.shape_pixels)


def region_mask(region: RegionSpec, meta: GridMeta) -> np.ndarray:
    """Boolean (H, W) mask of the cells whose centers lie in the region."""
    forward = (np.arange(meta.height_cells, dtype=np.float64) - meta.ego_row) * meta.cell_size_m
    lateral = (np.arange(meta.width_cells, dtype=np.float64) - meta.ego_col) * meta.cell_size_m
    rows = (forward >= region.forward_min) & (forward <= region.forward_max)
    cols = (lateral >= region.lateral_min) & (lateral <= region.lateral_max)
    return rows[:, None] & cols[None, :]


def undetected_area_probability(
    grid: ProbGrid,
    detections: list[DetectedObject],
    region: RegionSpec,
    config: PresenceConfig,
) -> float:
    """Leftover region mass (detection ellipses removed) over shape_pixels."""
    mask = region_mask(region, grid.meta)
    if not mask.any():
        raise ValidationError(f"region {region.name!r} does not intersect the grid")
    mask = mask.copy()
    for det in detections:
        g = det.location.get(0)
        if g is None:
            continue
        for r, c in ellipse_cells(g, config.ellipse_mass, grid.meta):
            mask[r, c] = False
    return min(1.0, float(grid.cells[mask].sum(dtype=np.float64)) / config.shape_pixels)


def location_quantiles(
    detection: DetectedObject,
    timestep: int,
    annotation: AnnotatedObject,
    meta: GridMeta,
) -> LocationQuantiles:
    """Direction/distance quantiles of the annotation center under the location.

    The distance axis u_y points from the ego position toward the Gaussian
    mean; the direction axis u_x is u_y rotated +90 degrees (counter-
    clockwise in the (row, col) plane). The annotation center is projected
    onto both axes and evaluated under the corresponding 1D marginal.
    """
    if timestep not in detection.location:
        raise ValidationError(f"detection {detection.detection_id} has no location at t={timestep}")
    g = detection.location[timestep]
    ego = np.array([meta.ego_row, meta.ego_col], dtype=np.float64)
    v = g.mean - ego
    norm = float(np.hypot(v[0], v[1]))
    if norm < 1e-12:
        raise ValidationError("degenerate direction: detection mean equals the ego position")
    u_y = v / norm
    u_x = np.array([-u_y[1], u_y[0]])
    a = np.array([annotation.center_row, annotation.center_col], dtype=np.float64) - ego

    qs = []
    for u in (u_x, u_y):
        mean = float(u @ (g.mean - ego))
        var = float(u @ g.cov @ u)
        z = (float(u @ a) - mean) / math.sqrt(var)
        qs.append(std_normal_cdf(z))
    return LocationQuantiles(detection.detection_id, timestep, qs[0], qs[1])

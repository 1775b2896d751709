"""Grid-to-objects extraction: seeding, stratified counts, and GMM fitting.

Cluster seeds are local maxima of the grid (strictly above all eight
neighbors, or first in (row, col) order on plateaus) thinned by greedy
suppression of weaker maxima within a separation radius. Every cell at or
above p_thresh contributes its center with multiplicity
round(p * m_thresh) (half away from zero, floor 1), and a weighted EM fit
initialized at the seeds turns those counts into one 2D Gaussian per
component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import DetectedObject, FrameRecord, Gaussian2D, ProbGrid, ValidationError

ASSOCIATION_GATE_CELLS_PER_STEP = 10.0


@dataclass(frozen=True)
class ExtractionConfig:
    p_thresh: float = 0.01
    m_thresh: float = 100.0
    max_components: int = 32
    em_max_iters: int = 200
    em_tol: float = 1e-6
    cov_reg: float = 1e-4
    min_seed_separation_cells: float = 3.0

    def __post_init__(self):
        if not (0.0 < self.p_thresh < 1.0):
            raise ValidationError("p_thresh must be in (0, 1)")
        if self.m_thresh <= 0:
            raise ValidationError("m_thresh must be positive")
        if self.p_thresh * self.m_thresh < 1.0:
            raise ValidationError("p_thresh * m_thresh must be >= 1")
        if self.max_components < 1 or self.em_max_iters < 1:
            raise ValidationError("max_components and em_max_iters must be positive")
        if self.em_tol <= 0 or self.cov_reg <= 0 or self.min_seed_separation_cells <= 0:
            raise ValidationError("em_tol, cov_reg, min_seed_separation_cells must be positive")


@dataclass(frozen=True)
class SamplePoints:
    """Cell centers with their stratified multiplicities."""

    points: np.ndarray  # (n, 2) float64 cell centers
    counts: np.ndarray  # (n,) int64 multiplicities

    def __post_init__(self):
        points = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64).reshape(-1, 2))
        counts = np.ascontiguousarray(np.asarray(self.counts, dtype=np.int64).reshape(-1))
        if points.shape[0] != counts.shape[0]:
            raise ValidationError("points and counts must have equal length")
        if points.shape[0] and counts.min() < 1:
            raise ValidationError("multiplicities must be >= 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class GmmFit:
    """Fitted mixture plus the per-iteration log-likelihood trace."""

    components: tuple[Gaussian2D, ...]
    weights: np.ndarray
    log_likelihoods: np.ndarray


def seed_clusters(grid: ProbGrid, config: ExtractionConfig) -> list[tuple[int, int]]:
    """Local maxima of the grid, strongest first, greedily separation-thinned."""
    v = grid.cells
    h, w = v.shape
    padded = np.full((h + 2, w + 2), -1.0)
    padded[1:-1, 1:-1] = v

    is_max = v >= config.p_thresh
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            nb = padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
            # A plateau neighbor that precedes this cell in (row, col) order
            # claims the maximum, so equality only survives toward later cells.
            if (dr, dc) > (0, 0):
                is_max &= v >= nb
            else:
                is_max &= v > nb

    rows, cols = np.nonzero(is_max)
    order = sorted(zip(-v[rows, cols], rows, cols))
    seeds: list[tuple[int, int]] = []
    min_sep2 = config.min_seed_separation_cells**2
    for _, r, c in order:
        if len(seeds) >= config.max_components:
            break
        if all((r - sr) ** 2 + (c - sc) ** 2 > min_sep2 for sr, sc in seeds):
            seeds.append((int(r), int(c)))
    return seeds


def build_sample_points(grid: ProbGrid, config: ExtractionConfig) -> SamplePoints:
    """One weighted point per cell at or above p_thresh."""
    mask = grid.cells >= config.p_thresh
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return SamplePoints(np.empty((0, 2)), np.empty(0, dtype=np.int64))
    p = grid.cells[rows, cols]
    counts = np.maximum(1, np.floor(p * config.m_thresh + 0.5).astype(np.int64))
    points = np.stack([rows, cols], axis=1).astype(np.float64)
    return SamplePoints(points, counts)


def fit_gmm(points: SamplePoints, seeds: list[tuple[int, int]], config: ExtractionConfig) -> GmmFit:
    """Weighted EM initialized at the seeds with isotropic covariance."""
    if len(points) == 0 or not seeds:
        return GmmFit((), np.empty(0), np.empty(0))
    n_distinct = np.unique(points.points, axis=0).shape[0]
    k = min(len(seeds), config.max_components, n_distinct)
    means0 = np.asarray(seeds[:k], dtype=np.float64).reshape(k, 2)
    var0 = (config.min_seed_separation_cells / 2.0) ** 2

    means, covs, mix, ll = kernels.em_fit(
        points.points,
        points.counts.astype(np.float64),
        means0,
        var0,
        config.em_max_iters,
        config.em_tol,
        config.cov_reg,
    )
    components = []
    for j in range(k):
        cov = np.asarray(covs[j], dtype=np.float64).copy()
        cov[1, 0] = cov[0, 1]
        while cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2 <= 1e-12:
            cov[0, 0] += config.cov_reg
            cov[1, 1] += config.cov_reg
        components.append(Gaussian2D(means[j].copy(), cov))
    return GmmFit(tuple(components), np.asarray(mix, dtype=np.float64), np.asarray(ll))


def extract_timestep(grid: ProbGrid, config: ExtractionConfig) -> GmmFit:
    seeds = seed_clusters(grid, config)
    pts = build_sample_points(grid, config)
    return fit_gmm(pts, seeds, config)


def extract_objects(
    frame: FrameRecord,
    config: ExtractionConfig,
    shape_pixels: float = 5.0,
    timesteps=None,
) -> list[DetectedObject]:
    """Run seed/sample/fit per timestep and link future Gaussians to t=0.

    Timestep-0 components become detections. A timestep-t component is
    attached to the unclaimed detection with the nearest timestep-0 mean,
    provided the distance is within t * ASSOCIATION_GATE_CELLS_PER_STEP;
    anything unassociated is discarded. Presence is left for the
    uncertainty stage. Passing timesteps restricts extraction to those
    steps (timestep 0 is always included).
    """
    if timesteps is None:
        steps = list(frame.meta.timesteps)
    else:
        steps = sorted({0, *timesteps})
    for t in steps:
        if not (0 <= t <= frame.meta.num_future_steps):
            raise ValidationError(f"timestep {t} outside 0..{frame.meta.num_future_steps}")
    fits = {t: extract_timestep(frame.grids[t], config) for t in steps}

    base = fits[0].components
    locations: list[dict[int, Gaussian2D]] = [{0: g} for g in base]
    for t in steps:
        if t == 0:
            continue
        comps = fits[t].components
        gate2 = (ASSOCIATION_GATE_CELLS_PER_STEP * t) ** 2
        pairs = []
        for i, g in enumerate(comps):
            for j, g0 in enumerate(base):
                d2 = float(np.sum((g.mean - g0.mean) ** 2))
                if d2 <= gate2:
                    pairs.append((d2, i, j))
        pairs.sort()
        used_i: set[int] = set()
        used_j: set[int] = set()
        for _, i, j in pairs:
            if i in used_i or j in used_j:
                continue
            used_i.add(i)
            used_j.add(j)
            locations[j][t] = comps[i]

    return [
        DetectedObject(detection_id=f"d{idx:03d}", location=loc, shape_pixels=shape_pixels)
        for idx, loc in enumerate(locations)
    ]

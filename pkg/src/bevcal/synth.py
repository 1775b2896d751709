"""Synthetic episode generation: known objects rendered into miscalibrated grids.

Each object is an isotropic Gaussian intensity bump moving linearly across
timesteps; its annotation is the deterministic footprint of the
pixel_footprint cells nearest its center. Background clutter appears as
sparse single-cell speckles (rate = occupancy_noise per cell, drawn once
per frame and persistent across its timesteps) that carry probability mass
but no annotation, so downstream presence calibration sees genuine false
positives. The reported grid is the true field pushed through a known
monotone distortion, which calibration stages should invert.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import AnnotatedObject, AnnotationMask, FrameRecord, GridMeta, ProbGrid, ValidationError
from .uncertainty import RegionSpec, region_mask

CLUTTER_AMPLITUDE = (0.05, 0.7)  # uniform range of speckle heights (pre-distortion)
MIN_OBJECT_SEPARATION_CELLS = 12.0
BUMP_RENDER_SIGMAS = 5.0


@dataclass(frozen=True)
class SynthObject:
    """One ground-truth object: start state, motion, and rendering shape."""

    object_id: int
    start_row: float
    start_col: float
    velocity: tuple[float, float]  # (rows/step, cols/step)
    pixel_footprint: int = 5
    peak_intensity: float = 0.8
    spread_cells: float = 2.0

    def __post_init__(self):
        if self.pixel_footprint < 1:
            raise ValidationError("pixel_footprint must be >= 1")
        if not (0.0 < self.peak_intensity <= 1.0):
            raise ValidationError("peak_intensity must be in (0, 1]")
        if self.spread_cells <= 0:
            raise ValidationError("spread_cells must be positive")

    def position(self, timestep: int) -> tuple[float, float]:
        return (
            self.start_row + self.velocity[0] * timestep,
            self.start_col + self.velocity[1] * timestep,
        )


@dataclass(frozen=True)
class DistortionSpec:
    """Strictly increasing probability map applied to the true field."""

    kind: str  # identity | power | logistic_shift
    gamma: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "power", "logistic_shift"):
            raise ValidationError(f"unknown distortion kind {self.kind!r}")
        if self.gamma <= 0:
            raise ValidationError("gamma must be positive")
        if not math.isfinite(self.shift):
            raise ValidationError("shift must be finite")

    def apply(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if self.kind == "identity":
            return q
        if self.kind == "power":
            return q**self.gamma
        # logistic_shift: sigmoid(logit(q) + shift), in a closed form that is
        # exact at q = 0 and q = 1; the clip only repairs terminal rounding.
        e = math.exp(self.shift)
        return np.clip(q * e / (1.0 + q * (e - 1.0)), 0.0, 1.0)


@dataclass(frozen=True)
class SynthConfig:
    meta: GridMeta
    num_episodes: int
    frames_per_episode: int
    objects_per_frame_mean: float
    distortion: DistortionSpec = field(default_factory=lambda: DistortionSpec("identity"))
    occupancy_noise: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_episodes <= 0 or self.frames_per_episode <= 0:
            raise ValidationError("episode and frame counts must be positive")
        if self.objects_per_frame_mean <= 0:
            raise ValidationError("objects_per_frame_mean must be positive")
        if not (0.0 <= self.occupancy_noise < 0.5):
            raise ValidationError("occupancy_noise must be in [0, 0.5)")


def footprint_pixels(meta: GridMeta, row: float, col: float, count: int) -> list[tuple[int, int]]:
    """The count in-grid cells nearest (row, col), nearest-first, ties by (row, col)."""
    radius = max(2, math.ceil(math.sqrt(count)))
    r0 = max(0, int(round(row)) - radius)
    r1 = min(meta.height_cells - 1, int(round(row)) + radius)
    c0 = max(0, int(round(col)) - radius)
    c1 = min(meta.width_cells - 1, int(round(col)) + radius)
    cells = [
        ((r - row) ** 2 + (c - col) ** 2, r, c)
        for r in range(r0, r1 + 1)
        for c in range(c0, c1 + 1)
    ]
    cells.sort()
    return [(r, c) for _, r, c in cells[:count]]


def _on_grid(meta: GridMeta, row: float, col: float) -> bool:
    return 0.0 <= row <= meta.height_cells - 1 and 0.0 <= col <= meta.width_cells - 1


def _add_bump(q: np.ndarray, row: float, col: float, peak: float, spread: float) -> None:
    radius = int(math.ceil(BUMP_RENDER_SIGMAS * spread))
    r0 = max(0, int(math.floor(row)) - radius)
    r1 = min(q.shape[0] - 1, int(math.ceil(row)) + radius)
    c0 = max(0, int(math.floor(col)) - radius)
    c1 = min(q.shape[1] - 1, int(math.ceil(col)) + radius)
    if r1 < r0 or c1 < c0:
        return
    rr = np.arange(r0, r1 + 1, dtype=np.float64)[:, None] - row
    cc = np.arange(c0, c1 + 1, dtype=np.float64)[None, :] - col
    q[r0 : r1 + 1, c0 : c1 + 1] += peak * np.exp(-(rr**2 + cc**2) / (2.0 * spread**2))


def render_frame(
    frame_id: str,
    episode_id: str,
    meta: GridMeta,
    objects: list[SynthObject],
    distortion: DistortionSpec,
    clutter: list[tuple[int, int, float]] = (),
) -> FrameRecord:
    """Render objects (plus fixed clutter cells) into a full FrameRecord.

    The true field at each timestep is the clipped sum of the object bumps
    at their advanced positions plus the clutter amplitudes; the stored grid
    is the distortion of that field. Objects off-grid at a timestep are
    dropped from it entirely (no bump, no annotation).
    """
    grids = {}
    masks = {}
    for t in meta.timesteps:
        q = np.zeros((meta.height_cells, meta.width_cells), dtype=np.float64)
        instances = []
        occupied = np.zeros_like(q, dtype=bool)
        for obj in objects:
            row, col = obj.position(t)
            if not _on_grid(meta, row, col):
                continue
            _add_bump(q, row, col, obj.peak_intensity, obj.spread_cells)
            pixels = footprint_pixels(meta, row, col, obj.pixel_footprint)
            for r, c in pixels:
                occupied[r, c] = True
            instances.append(AnnotatedObject.from_pixels(obj.object_id, pixels))
        for r, c, amp in clutter:
            q[r, c] += amp
        np.clip(q, 0.0, 1.0, out=q)
        reported = distortion.apply(q).astype(np.float32)
        grids[t] = ProbGrid(meta, t, reported)
        masks[t] = AnnotationMask(meta, t, occupied, tuple(instances))
    return FrameRecord(frame_id, episode_id, grids, masks)


def _draw_objects(rng: np.random.Generator, meta: GridMeta, mean_count: float) -> list[SynthObject]:
    n = int(rng.poisson(mean_count))
    margin = 10.0
    lo_r, hi_r = margin, meta.height_cells - 1 - margin
    lo_c, hi_c = margin, meta.width_cells - 1 - margin
    objects: list[SynthObject] = []
    for idx in range(n):
        placed = None
        for _ in range(50):
            row = rng.uniform(lo_r, hi_r)
            col = rng.uniform(lo_c, hi_c)
            if all(
                (row - o.start_row) ** 2 + (col - o.start_col) ** 2
                >= MIN_OBJECT_SEPARATION_CELLS**2
                for o in objects
            ):
                placed = (row, col)
                break
        if placed is None:
            continue
        objects.append(
            SynthObject(
                object_id=idx,
                start_row=placed[0],
                start_col=placed[1],
                velocity=(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)),
                pixel_footprint=5,
                peak_intensity=rng.uniform(0.25, 0.85),
                spread_cells=rng.uniform(0.8, 1.6),
            )
        )
    return objects


def _draw_clutter(
    rng: np.random.Generator, meta: GridMeta, rate: float
) -> list[tuple[int, int, float]]:
    if rate <= 0.0:
        return []
    mask = rng.random((meta.height_cells, meta.width_cells)) < rate
    rows, cols = np.nonzero(mask)
    amps = rng.uniform(CLUTTER_AMPLITUDE[0], CLUTTER_AMPLITUDE[1], size=rows.size)
    return [(int(r), int(c), float(a)) for r, c, a in zip(rows, cols, amps)]


def generate_dataset(config: SynthConfig) -> list[FrameRecord]:
    """Generate all frames of all episodes, bit-reproducible for a seed.

    Every episode derives its own RNG stream from (rng_seed, episode index),
    so episodes could be generated in parallel without changing the output.
    """
    frames: list[FrameRecord] = []
    for ep in range(config.num_episodes):
        rng = np.random.default_rng([config.rng_seed, ep])
        episode_id = f"ep{ep:03d}"
        for fi in range(config.frames_per_episode):
            frame_id = f"{episode_id}f{fi:03d}"
            objects = _draw_objects(rng, config.meta, config.objects_per_frame_mean)
            clutter = _draw_clutter(rng, config.meta, config.occupancy_noise)
            frames.append(
                render_frame(frame_id, episode_id, config.meta, objects, config.distortion, clutter)
            )
    return frames


def oracle_presence(frame: FrameRecord, region: RegionSpec) -> bool:
    """True iff any annotated pixel lies inside the region at timestep 0."""
    mask = region_mask(region, frame.meta)
    for inst in frame.annotations[0].instances:
        for r, c in inst.pixels:
            if mask[r, c]:
                return True
    return False

"""Grid, annotation, and detection data model plus dataset split management.

Coordinate convention: grids are indexed (row, col) with the cell (r, c)
centered at exactly (r, c) in grid coordinates; the row index grows with
forward distance from the ego vehicle, whose (possibly fractional) position
is (ego_row, ego_col). All types are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping

import numpy as np

CALIBRATION = "calibration"
TEST = "test"


class ValidationError(ValueError):
    """A domain object failed its construction-time invariants."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class GridMeta:
    """Shared geometry of every grid in a frame.

    Float fields are quantized to float32 on construction because the
    on-disk grid format stores them at that precision; quantizing up front
    makes write-then-read the identity.
    """

    height_cells: int
    width_cells: int
    cell_size_m: float
    ego_row: float
    ego_col: float
    num_future_steps: int
    step_seconds: float

    def __post_init__(self):
        object.__setattr__(self, "cell_size_m", _f32(self.cell_size_m))
        object.__setattr__(self, "ego_row", _f32(self.ego_row))
        object.__setattr__(self, "ego_col", _f32(self.ego_col))
        object.__setattr__(self, "step_seconds", _f32(self.step_seconds))
        if self.height_cells <= 0 or self.width_cells <= 0:
            raise ValidationError("grid dimensions must be positive")
        if self.cell_size_m <= 0:
            raise ValidationError("cell_size_m must be positive")
        if self.num_future_steps < 0:
            raise ValidationError("num_future_steps must be non-negative")
        if self.step_seconds <= 0:
            raise ValidationError("step_seconds must be positive")
        if not (0 <= self.ego_row < self.height_cells):
            raise ValidationError("ego_row out of grid bounds")
        if not (0 <= self.ego_col < self.width_cells):
            raise ValidationError("ego_col out of grid bounds")

    @property
    def num_cells(self) -> int:
        return self.height_cells * self.width_cells

    @property
    def timesteps(self) -> range:
        return range(self.num_future_steps + 1)


@dataclass(frozen=True, eq=False)
class ProbGrid:
    """One timestep's per-cell occupancy probabilities.

    Cells are float64 in memory; the on-disk format quantizes them to
    float32, so values that came from (or are bound for) disk are exactly
    float32-representable.
    """

    meta: GridMeta
    timestep: int
    cells: np.ndarray  # float64, shape (height_cells, width_cells)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.float64)
        if cells.size != self.meta.num_cells:
            raise ValidationError("cells length must equal height_cells * width_cells")
        cells = np.ascontiguousarray(
            cells.reshape(self.meta.height_cells, self.meta.width_cells)
        )
        if not np.all(np.isfinite(cells)):
            raise ValidationError("cell probability must be finite")
        if cells.min(initial=0.0) < 0.0 or cells.max(initial=0.0) > 1.0:
            raise ValidationError("cell probability out of range [0, 1]")
        if not (0 <= self.timestep <= self.meta.num_future_steps):
            raise ValidationError("timestep out of range")
        object.__setattr__(self, "cells", _freeze(cells))

    def __eq__(self, other):
        if not isinstance(other, ProbGrid):
            return NotImplemented
        return (
            self.meta == other.meta
            and self.timestep == other.timestep
            and np.array_equal(self.cells, other.cells)
        )


@dataclass(frozen=True, eq=False)
class AnnotatedObject:
    """Ground-truth object: its pixel footprint and the footprint's mean."""

    object_id: int
    center_row: float
    center_col: float
    pixels: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pixels = tuple((int(r), int(c)) for r, c in self.pixels)
        object.__setattr__(self, "pixels", pixels)
        if not pixels:
            raise ValidationError("annotation pixels must be non-empty")
        mean_r = sum(r for r, _ in pixels) / len(pixels)
        mean_c = sum(c for _, c in pixels) / len(pixels)
        if abs(mean_r - self.center_row) > 1e-9 or abs(mean_c - self.center_col) > 1e-9:
            raise ValidationError("annotation center must equal the pixel mean")

    @classmethod
    def from_pixels(cls, object_id: int, pixels) -> "AnnotatedObject":
        pixels = tuple((int(r), int(c)) for r, c in pixels)
        if not pixels:
            raise ValidationError("annotation pixels must be non-empty")
        mean_r = sum(r for r, _ in pixels) / len(pixels)
        mean_c = sum(c for _, c in pixels) / len(pixels)
        return cls(object_id, mean_r, mean_c, pixels)

    def __eq__(self, other):
        if not isinstance(other, AnnotatedObject):
            return NotImplemented
        return (
            self.object_id == other.object_id
            and self.center_row == other.center_row
            and self.center_col == other.center_col
            and self.pixels == other.pixels
        )


@dataclass(frozen=True, eq=False)
class AnnotationMask:
    """Ground-truth occupancy for one timestep plus its object instances."""

    meta: GridMeta
    timestep: int
    occupied: np.ndarray  # bool, shape (height_cells, width_cells)
    instances: tuple[AnnotatedObject, ...]

    def __post_init__(self):
        occ = np.asarray(self.occupied, dtype=bool)
        if occ.size != self.meta.num_cells:
            raise ValidationError("occupied length must equal height_cells * width_cells")
        occ = np.ascontiguousarray(occ.reshape(self.meta.height_cells, self.meta.width_cells))
        object.__setattr__(self, "occupied", _freeze(occ))
        object.__setattr__(self, "instances", tuple(self.instances))
        for inst in self.instances:
            for r, c in inst.pixels:
                if not (0 <= r < self.meta.height_cells and 0 <= c < self.meta.width_cells):
                    raise ValidationError(
                        f"instance {inst.object_id} pixel ({r}, {c}) outside the grid"
                    )
                if not occ[r, c]:
                    raise ValidationError(
                        f"instance {inst.object_id} pixel ({r}, {c}) not marked occupied"
                    )

    def __eq__(self, other):
        if not isinstance(other, AnnotationMask):
            return NotImplemented
        return (
            self.meta == other.meta
            and self.timestep == other.timestep
            and np.array_equal(self.occupied, other.occupied)
            and self.instances == other.instances
        )


@dataclass(frozen=True, eq=False)
class Gaussian2D:
    """2D Gaussian in grid coordinates (mean as (row, col), covariance in cells^2)."""

    mean: np.ndarray  # shape (2,) = (row, col)
    cov: np.ndarray  # shape (2, 2), symmetric positive definite

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(2).copy()
        cov = np.asarray(self.cov, dtype=np.float64).reshape(2, 2).copy()
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValidationError("Gaussian parameters must be finite")
        if abs(cov[0, 1] - cov[1, 0]) > 1e-12:
            raise ValidationError("covariance must be symmetric")
        # For a symmetric 2x2 matrix, trace > 0 and det > 0 iff both eigenvalues > 0.
        if cov[0, 0] + cov[1, 1] <= 0 or cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0] <= 0:
            raise ValidationError("covariance must be positive definite")
        object.__setattr__(self, "mean", _freeze(mean))
        object.__setattr__(self, "cov", _freeze(cov))

    def __eq__(self, other):
        if not isinstance(other, Gaussian2D):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)


def _proxy(mapping) -> Mapping:
    return MappingProxyType(dict(mapping))


@dataclass(frozen=True, eq=False)
class DetectedObject:
    """One extracted object: per-timestep location Gaussians and presence."""

    detection_id: str
    location: Mapping[int, Gaussian2D]
    presence: Mapping[int, float] = field(default_factory=dict)
    shape_pixels: float = 5.0
    matched_annotations: Mapping[int, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "location", _proxy(self.location))
        object.__setattr__(self, "presence", _proxy(self.presence))
        object.__setattr__(
            self,
            "matched_annotations",
            _proxy({t: tuple(ids) for t, ids in dict(self.matched_annotations).items()}),
        )
        if self.shape_pixels <= 0:
            raise ValidationError("shape_pixels must be positive")
        for t, p in self.presence.items():
            if not (0.0 <= p <= 1.0):
                raise ValidationError(f"presence at timestep {t} outside [0, 1]")
            if t not in self.location:
                raise ValidationError(f"presence timestep {t} has no location")

    def with_presence(self, presence: Mapping[int, float]) -> "DetectedObject":
        return replace(self, presence=presence)

    def with_matches(self, matched: Mapping[int, tuple[int, ...]]) -> "DetectedObject":
        return replace(self, matched_annotations=matched)

    def __eq__(self, other):
        if not isinstance(other, DetectedObject):
            return NotImplemented
        return (
            self.detection_id == other.detection_id
            and dict(self.location) == dict(other.location)
            and dict(self.presence) == dict(other.presence)
            and self.shape_pixels == other.shape_pixels
            and dict(self.matched_annotations) == dict(other.matched_annotations)
        )


@dataclass(frozen=True, eq=False)
class FrameRecord:
    """One frame: current and future grids, their annotations, and detections."""

    frame_id: str
    episode_id: str
    grids: Mapping[int, ProbGrid]
    annotations: Mapping[int, AnnotationMask]
    detections: tuple[DetectedObject, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "grids", _proxy(self.grids))
        object.__setattr__(self, "annotations", _proxy(self.annotations))
        object.__setattr__(self, "detections", tuple(self.detections))
        if not self.grids:
            raise ValidationError("frame must contain at least the timestep-0 grid")
        meta = self.meta
        expected = set(meta.timesteps)
        if set(self.grids) != expected or set(self.annotations) != expected:
            raise ValidationError("grids and annotations must cover timesteps 0..num_future_steps")
        for t, grid in self.grids.items():
            if grid.meta != meta or grid.timestep != t:
                raise ValidationError(f"grid at timestep {t} has inconsistent meta or timestep")
        for t, mask in self.annotations.items():
            if mask.meta != meta or mask.timestep != t:
                raise ValidationError(f"annotation at timestep {t} has inconsistent meta or timestep")

    @property
    def meta(self) -> GridMeta:
        return next(iter(self.grids.values())).meta

    def with_detections(self, detections) -> "FrameRecord":
        return replace(self, detections=tuple(detections))

    def __eq__(self, other):
        if not isinstance(other, FrameRecord):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.episode_id == other.episode_id
            and dict(self.grids) == dict(other.grids)
            and dict(self.annotations) == dict(other.annotations)
            and self.detections == other.detections
        )


@dataclass(frozen=True)
class SplitAssignment:
    """Frame-to-split mapping; every frame of an episode shares one label."""

    assignment: Mapping[str, str]
    calibration_fraction: float

    def __post_init__(self):
        object.__setattr__(self, "assignment", _proxy(self.assignment))
        for fid, label in self.assignment.items():
            if label not in (CALIBRATION, TEST):
                raise ValidationError(f"frame {fid} has unknown split label {label!r}")

    def label(self, frame_id: str) -> str:
        return self.assignment[frame_id]

    def calibration_ids(self) -> list[str]:
        return sorted(f for f, s in self.assignment.items() if s == CALIBRATION)

    def test_ids(self) -> list[str]:
        return sorted(f for f, s in self.assignment.items() if s == TEST)


def assign_splits(frames, calibration_fraction: float, seed: int) -> SplitAssignment:
    """Assign whole episodes to the calibration or test split.

    Episodes (sorted by id, then shuffled with the seed) are packed greedily
    into the calibration split whenever taking one moves the calibration
    frame count strictly closer to calibration_fraction * total. No episode
    is ever divided between splits.
    """
    if not frames:
        raise ValidationError("frames must be non-empty")
    if not (0.0 < calibration_fraction < 1.0):
        raise ValidationError("calibration_fraction must be in (0, 1)")

    sizes: dict[str, int] = {}
    episode_frames: dict[str, list[str]] = {}
    for frame in frames:
        sizes[frame.episode_id] = sizes.get(frame.episode_id, 0) + 1
        episode_frames.setdefault(frame.episode_id, []).append(frame.frame_id)

    episodes = sorted(sizes)
    if len(episodes) == 1:
        raise ValidationError("cannot split single episode")

    rng = np.random.default_rng(seed)
    order = [episodes[i] for i in rng.permutation(len(episodes))]

    total = sum(sizes.values())
    target = calibration_fraction * total
    chosen: list[str] = []
    count = 0
    for ep in order:
        if abs(count + sizes[ep] - target) < abs(count - target):
            chosen.append(ep)
            count += sizes[ep]

    # Greedy packing can leave a side empty; force the closest episode over.
    if not chosen:
        chosen = [min(episodes, key=lambda ep: (abs(sizes[ep] - target), ep))]
    elif len(chosen) == len(episodes):
        drop = min(chosen, key=lambda ep: (abs(count - sizes[ep] - target), ep))
        chosen.remove(drop)

    cal = set(chosen)
    assignment = {
        fid: (CALIBRATION if ep in cal else TEST)
        for ep, fids in episode_frames.items()
        for fid in fids
    }
    return SplitAssignment(assignment, calibration_fraction)

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bevcal.core import AnnotatedObject, AnnotationMask, FrameRecord, GridMeta, ProbGrid
from bevcal.grid_io import write_grid_file
from bevcal.synth import DistortionSpec, SynthConfig, generate_dataset


def make_meta(h=20, w=20, cell=0.5, ego_r=10.0, ego_c=10.0, future=0, step=1.0) -> GridMeta:
    return GridMeta(h, w, cell, ego_r, ego_c, future, step)


def make_frame(meta: GridMeta, frame_id="f0", episode_id="ep0", fill=0.0) -> FrameRecord:
    grids = {}
    masks = {}
    for t in meta.timesteps:
        cells = np.full((meta.height_cells, meta.width_cells), fill, dtype=np.float64)
        grids[t] = ProbGrid(meta, t, cells)
        masks[t] = AnnotationMask(meta, t, np.zeros_like(cells, dtype=bool), ())
    return FrameRecord(frame_id, episode_id, grids, masks)


def random_record(rng: np.random.Generator, h=16, w=14, future=2) -> FrameRecord:
    meta = GridMeta(
        h, w, float(rng.uniform(0.2, 1.0)), float(rng.uniform(0, h - 1)),
        float(rng.uniform(0, w - 1)), future, float(rng.uniform(0.5, 2.0)),
    )
    grids = {}
    masks = {}
    for t in meta.timesteps:
        cells = rng.random((h, w)).astype(np.float32).astype(np.float64)
        grids[t] = ProbGrid(meta, t, cells)
        occupied = np.zeros((h, w), dtype=bool)
        instances = []
        for i in range(int(rng.integers(0, 4))):
            r0 = int(rng.integers(0, h - 2))
            c0 = int(rng.integers(0, w - 2))
            pixels = [(r0 + dr, c0 + dc) for dr in range(2) for dc in range(2)]
            for r, c in pixels:
                occupied[r, c] = True
            instances.append(AnnotatedObject.from_pixels(i, pixels))
        masks[t] = AnnotationMask(meta, t, occupied, tuple(instances))
    fid = f"f{rng.integers(0, 10 ** 6):06d}"
    return FrameRecord(fid, f"ep{rng.integers(0, 100):03d}", grids, masks)


POWER_SEEDS = (11, 12, 13)


def _power_config(seed: int) -> SynthConfig:
    return SynthConfig(
        meta=GridMeta(120, 120, 0.5, 60.0, 60.0, 4, 1.0),
        num_episodes=10,
        frames_per_episode=10,
        objects_per_frame_mean=3.0,
        distortion=DistortionSpec("power", gamma=2.0),
        occupancy_noise=0.0008,
        rng_seed=seed,
    )


def _identity_config() -> SynthConfig:
    return SynthConfig(
        meta=GridMeta(120, 120, 0.5, 60.0, 60.0, 4, 1.0),
        num_episodes=35,
        frames_per_episode=16,
        objects_per_frame_mean=6.0,
        distortion=DistortionSpec("identity"),
        occupancy_noise=0.0,
        rng_seed=77,
    )


def _write_dataset(frames, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    for frame in frames:
        write_grid_file(frame, out / f"{frame.episode_id}_{frame.frame_id}.bevg")
    return out


@pytest.fixture(scope="session")
def power_dataset_dirs(tmp_path_factory) -> dict[int, Path]:
    """Power-distorted datasets (one per seed) on disk, shared by the suite."""
    base = tmp_path_factory.mktemp("power_data")
    dirs = {}
    for seed in POWER_SEEDS:
        frames = generate_dataset(_power_config(seed))
        dirs[seed] = _write_dataset(frames, base / f"seed{seed}")
    return dirs


@pytest.fixture(scope="session")
def identity_dataset_dir(tmp_path_factory) -> Path:
    """Large identity-distortion dataset for the quantile-uniformity criteria."""
    frames = generate_dataset(_identity_config())
    return _write_dataset(frames, tmp_path_factory.mktemp("identity_data") / "data")

from __future__ import annotations

import itertools

import numpy as np
import pytest

from bevcal.core import (
    CALIBRATION,
    AnnotatedObject,
    AnnotationMask,
    DetectedObject,
    FrameRecord,
    Gaussian2D,
    GridMeta,
    ProbGrid,
    ValidationError,
    assign_splits,
)
from conftest import make_frame, make_meta


class TestGridMeta:
    def test_valid(self):
        meta = make_meta()
        assert meta.num_cells == 400
        assert list(meta.timesteps) == [0]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"h": 0},
            {"cell": -0.5},
            {"ego_r": 25.0},
            {"ego_c": -1.0},
            {"future": -1},
            {"step": 0.0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            make_meta(**kwargs)

    def test_floats_quantized_to_f32(self):
        meta = make_meta(cell=0.1)
        assert meta.cell_size_m == float(np.float32(0.1))


class TestProbGrid:
    def test_rejects_out_of_range(self):
        meta = make_meta()
        cells = np.zeros((20, 20))
        cells[3, 3] = 1.5
        with pytest.raises(ValidationError, match="out of range"):
            ProbGrid(meta, 0, cells)

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_non_finite(self, bad):
        meta = make_meta()
        cells = np.zeros((20, 20))
        cells[0, 0] = bad
        with pytest.raises(ValidationError):
            ProbGrid(meta, 0, cells)

    def test_rejects_wrong_length(self):
        with pytest.raises(ValidationError, match="length"):
            ProbGrid(make_meta(), 0, np.zeros(399))

    def test_accepts_boundaries_and_flat_input(self):
        meta = make_meta()
        cells = np.zeros(400)
        cells[0] = 1.0
        grid = ProbGrid(meta, 0, cells)
        assert grid.cells.shape == (20, 20)
        assert grid.cells[0, 0] == 1.0

    def test_cells_immutable(self):
        grid = ProbGrid(make_meta(), 0, np.zeros((20, 20)))
        with pytest.raises(ValueError):
            grid.cells[0, 0] = 0.5


class TestAnnotatedObject:
    def test_center_must_match_pixel_mean(self):
        with pytest.raises(ValidationError, match="pixel mean"):
            AnnotatedObject(1, 5.0, 5.0, ((4, 4), (5, 5), (6, 7)))

    def test_from_pixels(self):
        obj = AnnotatedObject.from_pixels(7, [(1, 2), (2, 3), (3, 7)])
        assert obj.center_row == 2.0
        assert obj.center_col == 4.0

    def test_empty_pixels_rejected(self):
        with pytest.raises(ValidationError):
            AnnotatedObject.from_pixels(0, [])


class TestAnnotationMask:
    def test_instance_pixels_must_be_occupied(self):
        meta = make_meta()
        occ = np.zeros((20, 20), dtype=bool)
        inst = AnnotatedObject.from_pixels(0, [(3, 3)])
        with pytest.raises(ValidationError, match="not marked occupied"):
            AnnotationMask(meta, 0, occ, (inst,))

    def test_out_of_grid_pixel_rejected(self):
        meta = make_meta()
        occ = np.ones((20, 20), dtype=bool)
        inst = AnnotatedObject.from_pixels(0, [(25, 3)])
        with pytest.raises(ValidationError, match="outside the grid"):
            AnnotationMask(meta, 0, occ, (inst,))


class TestGaussian2D:
    def test_asymmetric_rejected(self):
        with pytest.raises(ValidationError, match="symmetric"):
            Gaussian2D(np.zeros(2), np.array([[1.0, 0.2], [0.1, 1.0]]))

    def test_non_positive_definite_rejected(self):
        with pytest.raises(ValidationError, match="positive definite"):
            Gaussian2D(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_valid(self):
        g = Gaussian2D(np.array([1.0, 2.0]), np.array([[2.0, 0.5], [0.5, 1.0]]))
        assert g.cov[0, 1] == 0.5


class TestDetectedObject:
    def test_presence_needs_location(self):
        g = Gaussian2D(np.zeros(2), np.eye(2))
        with pytest.raises(ValidationError, match="no location"):
            DetectedObject("d0", {0: g}, presence={1: 0.5})

    def test_presence_range(self):
        g = Gaussian2D(np.zeros(2), np.eye(2))
        with pytest.raises(ValidationError, match="outside"):
            DetectedObject("d0", {0: g}, presence={0: 1.5})

    def test_with_presence_returns_new_object(self):
        g = Gaussian2D(np.zeros(2), np.eye(2))
        det = DetectedObject("d0", {0: g})
        det2 = det.with_presence({0: 0.7})
        assert det.presence == {}
        assert det2.presence[0] == 0.7


class TestFrameRecord:
    def test_timestep_keys_must_cover_range(self):
        meta = make_meta(future=1)
        frame = make_frame(meta)
        with pytest.raises(ValidationError, match="cover timesteps"):
            FrameRecord("f", "e", {0: frame.grids[0]}, {0: frame.annotations[0]})

    def test_mixed_meta_rejected(self):
        f1 = make_frame(make_meta())
        g2 = ProbGrid(make_meta(ego_r=5.0), 0, np.zeros((20, 20)))
        with pytest.raises(ValidationError, match="inconsistent"):
            FrameRecord("f", "e", {0: g2}, {0: f1.annotations[0]})

    def test_round_trip_equality_semantics(self):
        frame = make_frame(make_meta(future=1))
        assert frame == make_frame(make_meta(future=1))
        assert frame != make_frame(make_meta(future=1), frame_id="other")


def _frames(episode_sizes: dict[str, int]):
    frames = []
    for ep, size in episode_sizes.items():
        for i in range(size):
            frames.append(make_frame(make_meta(h=4, w=4, ego_r=1, ego_c=1), f"{ep}_f{i}", ep))
    return frames


class TestAssignSplits:
    def test_exact_divisible_case(self):
        frames = _frames({f"ep{i}": 10 for i in range(10)})
        split = assign_splits(frames, 0.2, seed=3)
        assert len(split.calibration_ids()) == 20

    def test_deterministic(self):
        frames = _frames({f"ep{i}": 7 for i in range(6)})
        a = assign_splits(frames, 0.3, seed=11)
        b = assign_splits(frames, 0.3, seed=11)
        assert dict(a.assignment) == dict(b.assignment)

    def test_closest_subset_selected(self):
        # Oracle: enumerate every episode subset and find the frame count
        # closest to 20% of 100; only {10, 10} achieves it exactly.
        sizes = {"a": 10, "b": 10, "c": 80}
        best = min(
            (
                abs(sum(sizes[e] for e in combo) - 20.0)
                for k in range(len(sizes) + 1)
                for combo in itertools.combinations(sizes, k)
            ),
        )
        assert best == 0.0
        for seed in range(8):
            split = assign_splits(_frames(sizes), 0.2, seed=seed)
            cal_eps = {fid.split("_")[0] for fid in split.calibration_ids()}
            assert cal_eps == {"a", "b"}

    def test_single_episode_rejected(self):
        with pytest.raises(ValidationError, match="single episode"):
            assign_splits(_frames({"only": 10}), 0.2, seed=0)

    def test_no_episode_straddles_splits(self):
        rng = np.random.default_rng(5)
        for trial in range(25):
            sizes = {f"ep{i}": int(rng.integers(1, 12)) for i in range(int(rng.integers(2, 9)))}
            frames = _frames(sizes)
            frac = float(rng.uniform(0.1, 0.9))
            split = assign_splits(frames, frac, seed=trial)
            for ep in sizes:
                labels = {split.label(f.frame_id) for f in frames if f.episode_id == ep}
                assert len(labels) == 1
            assert split.calibration_ids() and split.test_ids()

    def test_both_sides_nonempty_even_when_greedy_would_take_none(self):
        # Both episodes overshoot the target, so plain greedy takes neither.
        frames = _frames({"a": 100, "b": 100})
        split = assign_splits(frames, 0.2, seed=0)
        assert len(split.calibration_ids()) == 100
        assert len(split.test_ids()) == 100

from __future__ import annotations

import numpy as np
import pytest

from bevcal.core import GridMeta, ProbGrid, ValidationError
from bevcal.extract import (
    ExtractionConfig,
    SamplePoints,
    build_sample_points,
    extract_objects,
    fit_gmm,
    seed_clusters,
)
from bevcal.synth import DistortionSpec, SynthObject, render_frame


def grid_from(cells: np.ndarray, future=0) -> ProbGrid:
    h, w = cells.shape
    meta = GridMeta(h, w, 0.5, h / 2, w / 2, future, 1.0)
    return ProbGrid(meta, 0, cells)


class TestSeedClusters:
    def test_empty_grid(self):
        assert seed_clusters(grid_from(np.zeros((30, 30))), ExtractionConfig()) == []

    def test_single_bump(self):
        cells = np.zeros((80, 80))
        rr = np.arange(80.0)[:, None] - 50.0
        cc = np.arange(80.0)[None, :] - 60.0
        cells += 0.8 * np.exp(-(rr**2 + cc**2) / 8.0)
        assert seed_clusters(grid_from(cells), ExtractionConfig()) == [(50, 60)]

    def test_equal_peaks_within_separation_keep_lex_smaller(self):
        cells = np.zeros((30, 30))
        cells[10, 10] = 0.5
        cells[10, 13] = 0.5
        cfg = ExtractionConfig(min_seed_separation_cells=5.0)
        assert seed_clusters(grid_from(cells), cfg) == [(10, 10)]

    def test_plateau_yields_single_lex_first_seed(self):
        cells = np.zeros((30, 30))
        cells[10, 10:13] = 0.5
        cfg = ExtractionConfig(min_seed_separation_cells=1.0)
        assert seed_clusters(grid_from(cells), cfg) == [(10, 10)]

    def test_max_components_cap(self):
        rng = np.random.default_rng(0)
        cells = np.zeros((60, 60))
        for _ in range(40):
            r, c = rng.integers(2, 58, size=2)
            cells[r, c] = rng.uniform(0.2, 0.9)
        cfg = ExtractionConfig(max_components=5, min_seed_separation_cells=1.0)
        assert len(seed_clusters(grid_from(cells), cfg)) <= 5

    def test_lowering_threshold_never_removes_seeds(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            cells = np.zeros((40, 40))
            for _ in range(12):
                r, c = rng.integers(1, 39, size=2)
                cells[r, c] = rng.uniform(0.02, 0.9)
            grid = grid_from(cells)
            hi = seed_clusters(grid, ExtractionConfig(p_thresh=0.1, m_thresh=10))
            lo = seed_clusters(grid, ExtractionConfig(p_thresh=0.02, m_thresh=50))
            assert set(hi) <= set(lo)


class TestBuildSamplePoints:
    def test_threshold_boundary_included(self):
        cells = np.zeros((10, 10))
        cells[2, 3] = 0.01
        pts = build_sample_points(grid_from(cells), ExtractionConfig())
        assert len(pts) == 1
        assert pts.counts[0] == 1
        assert tuple(pts.points[0]) == (2.0, 3.0)

    def test_below_threshold_excluded(self):
        cells = np.zeros((10, 10))
        cells[2, 3] = 0.005
        assert len(build_sample_points(grid_from(cells), ExtractionConfig())) == 0

    def test_round_half_away_from_zero(self):
        cells = np.zeros((10, 10))
        cells[5, 5] = 0.255
        pts = build_sample_points(grid_from(cells), ExtractionConfig())
        assert pts.counts[0] == 26

    def test_reciprocal_threshold_gives_multiplicity_at_least_one(self):
        rng = np.random.default_rng(1)
        cells = rng.random((20, 20))
        cfg = ExtractionConfig(p_thresh=0.05, m_thresh=20.0)  # m = 1/p
        pts = build_sample_points(grid_from(cells), cfg)
        assert pts.counts.min() >= 1

    def test_config_invariant_enforced(self):
        with pytest.raises(ValidationError, match="p_thresh"):
            ExtractionConfig(p_thresh=0.01, m_thresh=10.0)


def weighted_cloud(rng, center, sigma, n=1000) -> SamplePoints:
    draws = rng.normal(loc=center, scale=sigma, size=(n, 2))
    cells = np.round(draws).astype(np.int64)
    uniq, counts = np.unique(cells, axis=0, return_counts=True)
    return SamplePoints(uniq.astype(np.float64), counts)


class TestFitGmm:
    def test_single_point_degenerate(self):
        cfg = ExtractionConfig()
        pts = SamplePoints(np.array([[12.0, 7.0]]), np.array([5]))
        fit = fit_gmm(pts, [(12, 7)], cfg)
        assert len(fit.components) == 1
        g = fit.components[0]
        assert np.allclose(g.mean, [12.0, 7.0])
        assert np.allclose(g.cov, cfg.cov_reg * np.eye(2))

    def test_recovers_isotropic_gaussian(self):
        rng = np.random.default_rng(11)
        pts = weighted_cloud(rng, (50.0, 60.0), 2.0)
        fit = fit_gmm(pts, [(50, 60)], ExtractionConfig())
        g = fit.components[0]
        assert np.hypot(g.mean[0] - 50.0, g.mean[1] - 60.0) < 0.3
        for var in (g.cov[0, 0], g.cov[1, 1]):
            assert abs(np.sqrt(var) - 2.0) / 2.0 < 0.2

    def test_two_symmetric_clusters_half_weights(self):
        rng = np.random.default_rng(5)
        a = weighted_cloud(rng, (20.0, 20.0), 1.5)
        b = weighted_cloud(rng, (60.0, 70.0), 1.5)
        pts = SamplePoints(
            np.concatenate([a.points, b.points]), np.concatenate([a.counts, b.counts])
        )
        fit = fit_gmm(pts, [(20, 20), (60, 70)], ExtractionConfig())
        assert len(fit.components) == 2
        assert abs(fit.weights[0] - 0.5) < 0.05
        assert abs(fit.weights[1] - 0.5) < 0.05

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            k = int(rng.integers(1, 5))
            centers = rng.uniform(10, 90, size=(k, 2))
            clouds = [weighted_cloud(rng, c, rng.uniform(1, 3), n=300) for c in centers]
            pts = SamplePoints(
                np.concatenate([c.points for c in clouds]),
                np.concatenate([c.counts for c in clouds]),
            )
            fit = fit_gmm(pts, [tuple(np.round(c).astype(int)) for c in centers], ExtractionConfig())
            assert abs(fit.weights.sum() - 1.0) < 1e-9

    def test_log_likelihood_non_decreasing(self):
        rng = np.random.default_rng(23)
        for _ in range(15):
            k = int(rng.integers(1, 4))
            centers = rng.uniform(10, 90, size=(k, 2))
            clouds = [weighted_cloud(rng, c, rng.uniform(0.8, 3), n=200) for c in centers]
            pts = SamplePoints(
                np.concatenate([c.points for c in clouds]),
                np.concatenate([c.counts for c in clouds]),
            )
            fit = fit_gmm(pts, [tuple(np.round(c).astype(int)) for c in centers], ExtractionConfig())
            assert np.all(np.diff(fit.log_likelihoods) >= 0)

    def test_components_reduced_to_distinct_points(self):
        pts = SamplePoints(np.array([[5.0, 5.0], [5.0, 5.0], [9.0, 9.0]]), np.array([2, 3, 1]))
        fit = fit_gmm(pts, [(5, 5), (9, 9), (20, 20)], ExtractionConfig())
        assert len(fit.components) == 2

    def test_empty_inputs(self):
        empty = SamplePoints(np.empty((0, 2)), np.empty(0, dtype=np.int64))
        assert fit_gmm(empty, [(1, 1)], ExtractionConfig()).components == ()
        pts = SamplePoints(np.array([[1.0, 1.0]]), np.array([1]))
        assert fit_gmm(pts, [], ExtractionConfig()).components == ()


class TestExtractObjects:
    def meta(self) -> GridMeta:
        return GridMeta(120, 120, 0.5, 60.0, 60.0, 4, 1.0)

    def test_single_static_object_tracked_at_all_timesteps(self):
        obj = SynthObject(0, 50.0, 70.0, (0.0, 0.0), 5, 0.7, 1.5)
        frame = render_frame("f", "e", self.meta(), [obj], DistortionSpec("identity"))
        dets = extract_objects(frame, ExtractionConfig())
        assert len(dets) == 1
        assert sorted(dets[0].location) == [0, 1, 2, 3, 4]
        for t, g in dets[0].location.items():
            assert np.hypot(g.mean[0] - 50.0, g.mean[1] - 70.0) < 1.0

    def test_moving_object_future_location_follows(self):
        obj = SynthObject(0, 40.0, 40.0, (1.5, -1.0), 5, 0.7, 1.2)
        frame = render_frame("f", "e", self.meta(), [obj], DistortionSpec("identity"))
        dets = extract_objects(frame, ExtractionConfig())
        g4 = dets[0].location[4]
        assert np.hypot(g4.mean[0] - 46.0, g4.mean[1] - 36.0) < 1.0

    def test_empty_grid_no_detections(self):
        frame = render_frame("f", "e", self.meta(), [], DistortionSpec("identity"))
        assert extract_objects(frame, ExtractionConfig()) == []

    def test_object_present_only_at_t0(self):
        # leaves the grid after t=0, so only the timestep-0 location exists
        obj = SynthObject(0, 115.0, 60.0, (10.0, 0.0), 5, 0.7, 1.2)
        frame = render_frame("f", "e", self.meta(), [obj], DistortionSpec("identity"))
        dets = extract_objects(frame, ExtractionConfig())
        assert len(dets) == 1
        assert sorted(dets[0].location) == [0]

    def test_restricted_timesteps(self):
        obj = SynthObject(0, 50.0, 50.0, (0.5, 0.5), 5, 0.7, 1.2)
        frame = render_frame("f", "e", self.meta(), [obj], DistortionSpec("identity"))
        dets = extract_objects(frame, ExtractionConfig(), timesteps=(0, 4))
        assert sorted(dets[0].location) == [0, 4]

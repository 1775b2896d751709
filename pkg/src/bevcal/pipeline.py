"""End-to-end orchestration: load, split, extract, calibrate, evaluate.

Three variants mirror the experiment design: "uncal" extracts objects from
the raw grids; "pw_cal" fits a pixel-wise isotonic map on the calibration
split, recalibrates every grid, and re-extracts; "obj_cal" additionally
fits beta maps (presence, area) and per-axis quantile maps on the
calibration split of its base variant and applies them to the test split.
Every fitted map records the frames it saw, and evaluation asserts that no
fitted frame reappears in the test set.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibrate import BetaMap, calibrate_grid, fit_beta, fit_isotonic, fit_quantile_map, save_map
from .core import CALIBRATION, FrameRecord, SplitAssignment, ValidationError, assign_splits
from .evaluate import (
    compute_regression_curve,
    compute_reliability,
    ks_uniform_statistic,
    write_regression_csv,
    write_reliability_csv,
)
from .extract import ExtractionConfig, extract_objects
from .grid_io import read_grid_file
from .matching import MatchResult, area_labels, match_frame, presence_labels, write_matches_csv
from .svgplot import render_reliability_svg, render_scene_svg
from .uncertainty import PresenceConfig, RegionSpec, location_quantiles, presence_probability

log = logging.getLogger("bevcal")

VARIANT_CSV_NAMES = {"uncal": "uncal", "pw_cal": "pw-cal", "obj_cal": "obj-cal"}
PRESENCE_BINS = 10
AREA_BINS = 10
PIXEL_BINS = 15
SCENE_CLIP_LOG = -12.0


@dataclass(frozen=True)
class RunConfig:
    dataset_dir: Path
    output_dir: Path
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    presence: PresenceConfig = field(default_factory=PresenceConfig)
    regions: tuple[RegionSpec, ...] = ()
    calibration_fraction: float = 0.2
    split_seed: int = 0
    timesteps_to_evaluate: tuple[int, ...] = (0, 4)
    variants: tuple[str, ...] = ("uncal", "pw_cal", "obj_cal")
    obj_cal_base: str = "pw_cal"
    scene_svg_count: int = 4
    pixel_stride: int = 1
    threads: int = 1

    def __post_init__(self):
        if not self.variants:
            raise ValidationError("variants must be non-empty")
        for v in self.variants:
            if v not in VARIANT_CSV_NAMES:
                raise ValidationError(f"unknown variant {v!r}")
        if self.obj_cal_base not in ("uncal", "pw_cal"):
            raise ValidationError("obj_cal_base must be 'uncal' or 'pw_cal'")
        if self.pixel_stride < 1 or self.scene_svg_count < 0:
            raise ValidationError("pixel_stride must be >= 1 and scene_svg_count >= 0")


@dataclass
class VariantData:
    """Everything one variant computed, keyed by split and timestep."""

    frames: dict[str, FrameRecord]
    matches: dict[tuple[str, int], MatchResult]
    presence_pairs: dict[tuple[str, int], np.ndarray]  # (split, t) -> (n, 2)
    quantiles: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]]  # direction, distance
    area_pairs: dict[str, np.ndarray]  # split -> (n, 2)
    pixel_pairs: dict[tuple[str, int], np.ndarray]  # (split, t) -> (n, 2)


def load_frames(dataset_dir) -> list[FrameRecord]:
    paths = sorted(Path(dataset_dir).glob("*.bevg"))
    frames = [read_grid_file(p) for p in paths]
    frames.sort(key=lambda f: f.frame_id)
    seen = set()
    for f in frames:
        if f.frame_id in seen:
            raise ValidationError(f"duplicate frame_id {f.frame_id!r} in dataset")
        seen.add(f.frame_id)
    return frames


def _assert_no_leakage(fit_ids: set[str], eval_ids: set[str], what: str) -> None:
    overlap = fit_ids & eval_ids
    if overlap:
        raise RuntimeError(f"split leakage fitting {what}: {sorted(overlap)[:5]} in both splits")


def _pixel_pairs(frames: list[FrameRecord], timesteps, stride: int) -> np.ndarray:
    chunks = []
    for frame in frames:
        for t in timesteps:
            p = frame.grids[t].cells.ravel()[::stride]
            y = frame.annotations[t].occupied.ravel()[::stride].astype(np.float64)
            chunks.append(np.column_stack([p, y]))
    if not chunks:
        return np.empty((0, 2))
    return np.concatenate(chunks)


def _object_stage(
    frames: list[FrameRecord],
    split: SplitAssignment,
    cfg: RunConfig,
    timesteps: tuple[int, ...],
) -> VariantData:
    """Extract detections, fill presence, match, and collect labeled pairs."""

    def process(frame: FrameRecord) -> FrameRecord:
        dets = extract_objects(
            frame, cfg.extraction, shape_pixels=cfg.presence.shape_pixels, timesteps=timesteps
        )
        filled = []
        for det in dets:
            presence = {
                t: presence_probability(frame.grids[t], det.location[t], cfg.presence)
                for t in timesteps
                if t in det.location
            }
            filled.append(det.with_presence(presence))
        return frame.with_detections(filled)

    if cfg.threads == 1:
        processed = [process(f) for f in frames]
    else:
        workers = cfg.threads if cfg.threads > 0 else None
        with ThreadPoolExecutor(max_workers=workers) as pool:
            processed = list(pool.map(process, frames))
    by_id = {f.frame_id: f for f in processed}

    matches: dict[tuple[str, int], MatchResult] = {}
    for frame in processed:
        for t in timesteps:
            matches[(frame.frame_id, t)] = match_frame(frame, t, cfg.presence.ellipse_mass)

    data = VariantData(by_id, matches, {}, {}, {}, {})
    dets_by_frame = {f.frame_id: list(f.detections) for f in processed}
    for split_name in (CALIBRATION, "test"):
        ids = [f.frame_id for f in processed if split.label(f.frame_id) == split_name]
        split_frames = [by_id[i] for i in ids]
        for t in timesteps:
            results = [matches[(i, t)] for i in ids]
            pairs = presence_labels(results, dets_by_frame)
            data.presence_pairs[(split_name, t)] = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
            qdir, qdist = [], []
            for res in results:
                frame = by_id[res.frame_id]
                dets = {d.detection_id: d for d in frame.detections}
                anns = {a.object_id: a for a in frame.annotations[t].instances}
                for det_id, obj_id in res.pairs:
                    try:
                        lq = location_quantiles(dets[det_id], t, anns[obj_id], frame.meta)
                    except ValidationError:
                        continue
                    qdir.append(lq.q_direction)
                    qdist.append(lq.q_distance)
            data.quantiles[(split_name, t)] = (np.asarray(qdir), np.asarray(qdist))
        if cfg.regions:
            records = area_labels(
                split_frames,
                list(cfg.regions),
                dets_by_frame,
                {i: matches[(i, 0)] for i in ids},
                cfg.presence,
            )
            data.area_pairs[split_name] = np.asarray(
                [(r.p_area, r.label) for r in records], dtype=np.float64
            ).reshape(-1, 2)
        for t in timesteps:
            data.pixel_pairs[(split_name, t)] = _pixel_pairs(
                split_frames, (t,), cfg.pixel_stride
            )
    return data


def _fit_beta_or_identity(pairs: np.ndarray, what: str) -> BetaMap:
    # Degenerate calibration data (single class, too few points) falls back
    # to the identity member of the beta family rather than aborting the run.
    try:
        return fit_beta(pairs)
    except (ValidationError, RuntimeError) as exc:
        log.warning("beta fit for %s fell back to identity: %s", what, exc)
        return BetaMap(1.0, 1.0, 0.0)


def _metric_rows(variant: str, data: VariantData, cfg: RunConfig, timesteps, out_dir: Path):
    """Evaluate one variant on the test split; write its CSV/SVG artifacts."""
    rows = []
    vname = VARIANT_CSV_NAMES[variant]
    vdir = out_dir / vname
    vdir.mkdir(parents=True, exist_ok=True)

    def add(metric: str, value: float) -> None:
        rows.append((metric, "test", vname, value))

    for t in timesteps:
        pairs = data.presence_pairs[("test", t)]
        if pairs.shape[0] == 0:
            log.warning("variant %s has no test detections at t=%d", vname, t)
            add(f"ece_presence_f{t}", float("nan"))
        else:
            rep = compute_reliability(pairs, "equal_width", PRESENCE_BINS)
            add(f"ece_presence_f{t}", rep.ece)
            write_reliability_csv(rep, vdir / f"reliability_presence_f{t}.csv")
            render_reliability_svg(
                rep,
                rep.counts(),
                vdir / f"reliability_presence_f{t}.svg",
                title=f"presence {vname} f={t}",
            )
        qdir, qdist = data.quantiles[("test", t)]
        for axis, qs in (("direction", qdir), ("distance", qdist)):
            if qs.size == 0:
                add(f"ks_{axis}_f{t}", float("nan"))
                continue
            add(f"ks_{axis}_f{t}", ks_uniform_statistic(qs))
            write_regression_csv(
                compute_regression_curve(qs), vdir / f"regression_{axis}_f{t}.csv"
            )

    if cfg.regions:
        pairs = data.area_pairs["test"]
        if pairs.shape[0] == 0:
            add("ece_area_f0", float("nan"))
        else:
            rep = compute_reliability(pairs, "equal_size", AREA_BINS)
            add("ece_area_f0", rep.ece)
            write_reliability_csv(rep, vdir / "reliability_area_f0.csv")
            render_reliability_svg(
                rep,
                rep.counts(),
                vdir / "reliability_area_f0.svg",
                title=f"undetected-area {vname}",
                log_axes=True,
            )

    for t in timesteps:
        pixels = data.pixel_pairs[("test", t)]
        if pixels.shape[0] == 0:
            add(f"ece_pixel_f{t}", float("nan"))
            add(f"nll_pixel_f{t}", float("nan"))
            continue
        rep = compute_reliability(pixels, "equal_width", PIXEL_BINS)
        add(f"ece_pixel_f{t}", rep.ece)
        add(f"nll_pixel_f{t}", rep.nll)
        write_reliability_csv(rep, vdir / f"reliability_pixel_f{t}.csv")
        render_reliability_svg(
            rep, rep.counts(), vdir / f"reliability_pixel_f{t}.svg", title=f"pixels {vname} f={t}"
        )

    write_matches_csv(
        [data.matches[k] for k in sorted(data.matches)], vdir / "matches.csv"
    )
    return rows


def _render_scenes(data: VariantData, split: SplitAssignment, cfg: RunConfig, vdir: Path) -> None:
    test_ids = [i for i in sorted(data.frames) if split.label(i) != CALIBRATION]
    for fid in test_ids[: cfg.scene_svg_count]:
        frame = data.frames[fid]
        render_scene_svg(
            frame,
            list(frame.detections),
            list(cfg.regions),
            SCENE_CLIP_LOG,
            vdir / f"scene_{fid}.svg",
            ellipse_mass=cfg.presence.ellipse_mass,
        )


def run_pipeline(cfg: RunConfig) -> Path:
    """Execute the configured variants; returns the metrics.csv path."""
    frames = load_frames(cfg.dataset_dir)
    if not frames:
        raise ValidationError(f"no .bevg files in {cfg.dataset_dir}")
    meta = frames[0].meta
    timesteps = tuple(cfg.timesteps_to_evaluate)
    for t in timesteps:
        if not (0 <= t <= meta.num_future_steps):
            raise ValidationError(f"timestep {t} outside 0..{meta.num_future_steps}")

    split = assign_splits(frames, cfg.calibration_fraction, cfg.split_seed)
    cal_ids = set(split.calibration_ids())
    test_ids = set(split.test_ids())

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    calib_dir = out_dir / "calib"

    need_pw = "pw_cal" in cfg.variants or (
        "obj_cal" in cfg.variants and cfg.obj_cal_base == "pw_cal"
    )
    need_uncal = "uncal" in cfg.variants or (
        "obj_cal" in cfg.variants and cfg.obj_cal_base == "uncal"
    )

    stages: dict[str, VariantData] = {}
    if need_uncal:
        log.info("extracting objects from raw grids")
        stages["uncal"] = _object_stage(frames, split, cfg, timesteps)

    if need_pw:
        log.info("fitting pixel-wise isotonic map")
        cal_frames = [f for f in frames if f.frame_id in cal_ids]
        iso = fit_isotonic(_pixel_pairs(cal_frames, timesteps, cfg.pixel_stride))
        _assert_no_leakage(cal_ids, test_ids, "pixel isotonic map")
        calib_dir.mkdir(parents=True, exist_ok=True)
        save_map(iso, calib_dir / "isotonic_pixel.calib", {"fitted_on": sorted(cal_ids)})
        recal = [
            FrameRecord(
                f.frame_id,
                f.episode_id,
                {t: calibrate_grid(g, iso) for t, g in f.grids.items()},
                dict(f.annotations),
            )
            for f in frames
        ]
        log.info("re-extracting objects from calibrated grids")
        stages["pw_cal"] = _object_stage(recal, split, cfg, timesteps)

    all_rows = []
    for variant in cfg.variants:
        if variant in ("uncal", "pw_cal"):
            data = stages[variant]
            all_rows.extend(_metric_rows(variant, data, cfg, timesteps, out_dir))
            _render_scenes(data, split, cfg, out_dir / VARIANT_CSV_NAMES[variant])
            continue

        # obj_cal: fit object-wise maps on the base variant's calibration split.
        base = stages[cfg.obj_cal_base]
        calib_dir.mkdir(parents=True, exist_ok=True)
        data = VariantData(
            base.frames, base.matches, {}, {}, {}, dict(base.pixel_pairs)
        )
        for t in timesteps:
            cal_pairs = base.presence_pairs[(CALIBRATION, t)]
            _assert_no_leakage(cal_ids, test_ids, f"presence beta map f{t}")
            beta = _fit_beta_or_identity(cal_pairs, f"presence f{t}")
            save_map(beta, calib_dir / f"beta_presence_f{t}.calib", {"fitted_on": sorted(cal_ids)})
            for split_name in (CALIBRATION, "test"):
                pairs = base.presence_pairs[(split_name, t)].copy()
                if pairs.shape[0]:
                    pairs[:, 0] = beta.apply(pairs[:, 0])
                data.presence_pairs[(split_name, t)] = pairs

            qmaps = {}
            for axis_idx, axis in enumerate(("direction", "distance")):
                cal_q = base.quantiles[(CALIBRATION, t)][axis_idx]
                try:
                    qmap = fit_quantile_map(cal_q)
                except ValidationError as exc:
                    log.warning("quantile map %s f%d unavailable: %s", axis, t, exc)
                    qmap = None
                else:
                    save_map(
                        qmap,
                        calib_dir / f"quantile_{axis}_f{t}.calib",
                        {"fitted_on": sorted(cal_ids)},
                    )
                qmaps[axis] = qmap
            for split_name in (CALIBRATION, "test"):
                qdir, qdist = base.quantiles[(split_name, t)]
                if qmaps["direction"] is not None and qdir.size:
                    qdir = qmaps["direction"].apply(qdir)
                if qmaps["distance"] is not None and qdist.size:
                    qdist = qmaps["distance"].apply(qdist)
                data.quantiles[(split_name, t)] = (qdir, qdist)

        if cfg.regions:
            beta_area = _fit_beta_or_identity(base.area_pairs[CALIBRATION], "area")
            save_map(beta_area, calib_dir / "beta_area.calib", {"fitted_on": sorted(cal_ids)})
            for split_name in (CALIBRATION, "test"):
                pairs = base.area_pairs[split_name].copy()
                if pairs.shape[0]:
                    pairs[:, 0] = beta_area.apply(pairs[:, 0])
                data.area_pairs[split_name] = pairs

        all_rows.extend(_metric_rows(variant, data, cfg, timesteps, out_dir))
        _render_scenes(data, split, cfg, out_dir / VARIANT_CSV_NAMES[variant])

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "split", "variant", "value"])
        for metric, split_name, vname, value in all_rows:
            writer.writerow([metric, split_name, vname, repr(float(value))])
    return metrics_path

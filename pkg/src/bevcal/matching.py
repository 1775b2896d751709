"""Detection-annotation matching and the labeled pairs fed to calibration.

A detection and an annotation match iff any annotated pixel falls inside
the detection's location ellipse, so one annotation can support several
detections and vice versa. Presence labels cover every detection, matched
or not; area labels flag regions that still contain an annotation no
detection matched at all.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping

from .core import DetectedObject, FrameRecord, ValidationError
from .uncertainty import PresenceConfig, RegionSpec, ellipse_cells, region_mask, undetected_area_probability


@dataclass(frozen=True)
class MatchResult:
    frame_id: str
    timestep: int
    pairs: tuple[tuple[str, int], ...]  # (detection_id, object_id)
    unmatched_detections: tuple[str, ...]
    unmatched_annotations: tuple[int, ...]


@dataclass(frozen=True)
class AreaRecord:
    frame_id: str
    region_name: str
    p_area: float
    label: int


def match_frame(frame: FrameRecord, timestep: int, ellipse_mass: float = 0.99) -> MatchResult:
    """Pair every detection with every annotation whose pixels its ellipse covers.

    Only detections holding a location at the timestep take part; matching
    is many-to-many and independent of input order.
    """
    instances = frame.annotations[timestep].instances
    pairs = []
    matched_dets = set()
    matched_anns = set()
    det_ids = []
    for det in frame.detections:
        g = det.location.get(timestep)
        if g is None:
            continue
        det_ids.append(det.detection_id)
        cells = ellipse_cells(g, ellipse_mass, frame.meta)
        for inst in instances:
            if any((r, c) in cells for r, c in inst.pixels):
                pairs.append((det.detection_id, inst.object_id))
                matched_dets.add(det.detection_id)
                matched_anns.add(inst.object_id)
    return MatchResult(
        frame_id=frame.frame_id,
        timestep=timestep,
        pairs=tuple(pairs),
        unmatched_detections=tuple(d for d in det_ids if d not in matched_dets),
        unmatched_annotations=tuple(
            i.object_id for i in instances if i.object_id not in matched_anns
        ),
    )


def presence_labels(
    results: list[MatchResult],
    detections_by_frame: Mapping[str, list[DetectedObject]],
) -> list[tuple[float, int]]:
    """One (presence, matched?) record per detection active at each result's timestep."""
    records = []
    for res in results:
        matched = {d for d, _ in res.pairs}
        for det in detections_by_frame[res.frame_id]:
            if res.timestep not in det.location:
                continue
            p = det.presence.get(res.timestep)
            if p is None:
                raise ValidationError(
                    f"detection {det.detection_id} lacks presence at t={res.timestep}"
                )
            records.append((p, 1 if det.detection_id in matched else 0))
    return records


def area_labels(
    frames: list[FrameRecord],
    regions: list[RegionSpec],
    detections_by_frame: Mapping[str, list[DetectedObject]],
    matches_by_frame: Mapping[str, MatchResult],
    config: PresenceConfig,
) -> list[AreaRecord]:
    """Per frame and region: leftover-area probability and the undetected label.

    The label is 1 iff an annotation with no matched detection at timestep 0
    has a pixel inside the region, i.e. the region truly holds a missed
    object.
    """
    records = []
    for frame in frames:
        dets = detections_by_frame[frame.frame_id]
        match = matches_by_frame[frame.frame_id]
        matched_anns = {obj for _, obj in match.pairs}
        for region in regions:
            p_area = undetected_area_probability(frame.grids[0], dets, region, config)
            mask = region_mask(region, frame.meta)
            label = 0
            for inst in frame.annotations[0].instances:
                if inst.object_id in matched_anns:
                    continue
                if any(mask[r, c] for r, c in inst.pixels):
                    label = 1
                    break
            records.append(AreaRecord(frame.frame_id, region.name, p_area, label))
    return records


def write_matches_csv(results: list[MatchResult], path) -> None:
    """matches.csv: one row per pair, plus unmatched rows with a blank side."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_id", "timestep", "detection_id", "object_id"])
        for res in results:
            for det_id, obj_id in res.pairs:
                writer.writerow([res.frame_id, res.timestep, det_id, obj_id])
            for det_id in res.unmatched_detections:
                writer.writerow([res.frame_id, res.timestep, det_id, ""])
            for obj_id in res.unmatched_annotations:
                writer.writerow([res.frame_id, res.timestep, "", obj_id])

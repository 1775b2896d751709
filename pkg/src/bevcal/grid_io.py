"""BEVG on-disk format: one frame's grids, annotations, and identifiers.

Layout (little-endian):
  bytes 0-3   magic b"BEVG"
  bytes 4-5   format version, u16 (currently 1)
  bytes 6-7   reserved, zero
  header      u32 height_cells, u32 width_cells, f32 cell_size_m,
              f32 ego_row, f32 ego_col, u16 num_future_steps, f32 step_seconds,
              u16 frame_id length + UTF-8 bytes,
              u16 episode_id length + UTF-8 bytes
  per timestep t = 0..num_future_steps:
              height*width f32 probabilities, row-major
              height*width u8 occupancy (0/1)
              u32 instance count, then per instance:
                u32 id, f32 center_row, f32 center_col,
                u32 pixel count, (u16 row, u16 col) pairs

Floats are stored at f32 precision; annotation centers are recomputed from
the pixel lists on read (the stored centers act as a consistency check), so
a write/read round trip reproduces the record exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import (
    AnnotatedObject,
    AnnotationMask,
    FrameRecord,
    GridMeta,
    ProbGrid,
    ValidationError,
)

MAGIC = b"BEVG"
VERSION = 1


class GridFormatError(ValueError):
    """The file is not a valid BEVG stream."""


class GridLengthError(GridFormatError):
    """The file ended early or carries trailing bytes."""


def _validate_record(record: FrameRecord) -> None:
    # Types validate on construction; re-check the value-level invariants so
    # a corrupted record cannot reach the disk.
    for t, grid in record.grids.items():
        cells = np.asarray(grid.cells)
        if not np.all(np.isfinite(cells)):
            raise ValidationError(f"cell probability not finite at timestep {t}")
        if cells.min(initial=0.0) < 0.0 or cells.max(initial=0.0) > 1.0:
            raise ValidationError("cell probability out of range")
    for t, mask in record.annotations.items():
        for inst in mask.instances:
            for r, c in inst.pixels:
                if not (0 <= r < mask.meta.height_cells and 0 <= c < mask.meta.width_cells):
                    raise ValidationError(
                        f"instance {inst.object_id} pixel outside grid at timestep {t}"
                    )
                if not (0 <= r <= 0xFFFF and 0 <= c <= 0xFFFF):
                    raise ValidationError("pixel coordinates exceed u16 range")


def write_grid_file(record: FrameRecord, path) -> None:
    """Serialize a FrameRecord to the BEVG format at path."""
    _validate_record(record)
    meta = record.meta
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", VERSION, 0)
    out += struct.pack(
        "<IIfffHf",
        meta.height_cells,
        meta.width_cells,
        meta.cell_size_m,
        meta.ego_row,
        meta.ego_col,
        meta.num_future_steps,
        meta.step_seconds,
    )
    for ident in (record.frame_id, record.episode_id):
        raw = ident.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValidationError("identifier longer than 65535 bytes")
        out += struct.pack("<H", len(raw)) + raw

    for t in meta.timesteps:
        grid = record.grids[t]
        mask = record.annotations[t]
        out += np.ascontiguousarray(grid.cells, dtype="<f4").tobytes()
        out += np.ascontiguousarray(mask.occupied, dtype=np.uint8).tobytes()
        out += struct.pack("<I", len(mask.instances))
        for inst in mask.instances:
            out += struct.pack(
                "<Iff", inst.object_id, np.float32(inst.center_row), np.float32(inst.center_col)
            )
            out += struct.pack("<I", len(inst.pixels))
            out += b"".join(struct.pack("<HH", r, c) for r, c in inst.pixels)

    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise GridLengthError(
                f"file truncated: needed {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_grid_file(path) -> FrameRecord:
    """Parse and validate a BEVG file into a FrameRecord."""
    with open(path, "rb") as fh:
        data = fh.read()
    cur = _Cursor(data)

    if cur.take(4) != MAGIC:
        raise GridFormatError(f"bad magic bytes in {path}")
    version, reserved = cur.unpack("<HH")
    if version != VERSION:
        raise GridFormatError(f"unsupported format version {version}")
    if reserved != 0:
        raise GridFormatError("reserved header bytes must be zero")

    height, width, cell_size, ego_row, ego_col, nfuture, step_s = cur.unpack("<IIfffHf")
    try:
        meta = GridMeta(height, width, cell_size, ego_row, ego_col, nfuture, step_s)
    except ValidationError as exc:
        raise GridFormatError(f"invalid grid header: {exc}") from exc

    idents = []
    for _ in range(2):
        (ln,) = cur.unpack("<H")
        idents.append(cur.take(ln).decode("utf-8"))
    frame_id, episode_id = idents

    grids = {}
    masks = {}
    ncells = meta.num_cells
    for t in meta.timesteps:
        cells = np.frombuffer(cur.take(4 * ncells), dtype="<f4").astype(np.float64)
        if np.isnan(cells).any():
            raise ValidationError(f"NaN cell probability at timestep {t}")
        occ_raw = np.frombuffer(cur.take(ncells), dtype=np.uint8)
        if occ_raw.max(initial=0) > 1:
            raise GridFormatError(f"occupancy byte not 0/1 at timestep {t}")
        (count,) = cur.unpack("<I")
        instances = []
        for _ in range(count):
            obj_id, c_row, c_col = cur.unpack("<Iff")
            (npix,) = cur.unpack("<I")
            flat = np.frombuffer(cur.take(4 * npix), dtype="<u2")
            pixels = [(int(flat[2 * i]), int(flat[2 * i + 1])) for i in range(npix)]
            inst = AnnotatedObject.from_pixels(obj_id, pixels)
            if abs(inst.center_row - c_row) > 5e-3 or abs(inst.center_col - c_col) > 5e-3:
                raise GridFormatError(
                    f"instance {obj_id} stored center disagrees with its pixel mean"
                )
            instances.append(inst)
        grids[t] = ProbGrid(meta, t, cells)
        masks[t] = AnnotationMask(meta, t, occ_raw.astype(bool), tuple(instances))

    if cur.pos != len(data):
        raise GridLengthError(f"{len(data) - cur.pos} trailing bytes after the last section")

    return FrameRecord(frame_id, episode_id, grids, masks)

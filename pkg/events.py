"""Event stream and voxel grid operations: encoding, statistics and file I/O.

Voxel encoding uses hard (floor) temporal bin assignment, so grids built from
integer polarities hold integer-valued entries.

File formats (UTF-8 text):

    EVT1 <width> <height> <t_start> <t_end>
    <t> <x> <y> <p>            one event per line, p in {1, -1}

    VOX1 <T> <H> <W>
    T*H*W decimals in (tau, y, x) row-major order, one grid row per line
"""
from __future__ import annotations

from logging import getLogger
from pathlib import Path
from typing import Union

import numpy as np

from errors import (
    ConfigError,
    DegenerateSpanError,
    EventParseError,
    EventValidationError,
)
from models import EventStream, StreamStats, SurvivalMap, VoxelGrid
from utils import atomic_write_text

logger = getLogger(__name__)

EVT_MAGIC = "EVT1"
VOX_MAGIC = "VOX1"
DEFAULT_BINS = 6


def bin_indices(stream: EventStream, T: int) -> np.ndarray:
    """Temporal bin of every event: floor((t - t_start) * T / (span + 1))."""
    span = stream.t_end - stream.t_start
    return (stream.t - stream.t_start) * T // (span + 1)


def encode_voxel(stream: EventStream, T: int = DEFAULT_BINS) -> VoxelGrid:
    """Accumulate event polarities into a T x H x W voxel grid."""
    if T < 1:
        raise ConfigError(f"bin count must be >= 1, got {T}")
    if stream.t_end - stream.t_start <= 0:
        raise DegenerateSpanError(
            f"stream span [{stream.t_start}, {stream.t_end}] is empty; cannot assign temporal bins"
        )
    grid = np.zeros((T, stream.sensor_height, stream.sensor_width), dtype=np.float64)
    if len(stream):
        tau = bin_indices(stream, T)
        np.add.at(grid, (tau, stream.y, stream.x), stream.p.astype(np.float64))
    return VoxelGrid(data=grid, t_start=stream.t_start, t_end=stream.t_end)


def stream_stats(stream: EventStream) -> StreamStats:
    """Polarity counts and mean event rate over the stream span."""
    count_pos = int(np.count_nonzero(stream.p > 0))
    count_neg = len(stream) - count_pos
    span_us = stream.t_end - stream.t_start
    if span_us <= 0:
        return StreamStats(count_pos=count_pos, count_neg=count_neg, mean_rate_per_second=0.0, zero_span=True)
    rate = (count_pos + count_neg) / (span_us / 1e6)
    return StreamStats(count_pos=count_pos, count_neg=count_neg, mean_rate_per_second=rate)


# -------------------- Event files --------------------


def _parse_ints(line: str, expected: int, line_no: int) -> list[int]:
    parts = line.split()
    if len(parts) != expected:
        raise EventParseError(line_no, f"expected {expected} fields, got {len(parts)}: {line!r}")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise EventParseError(line_no, f"non-integer field in {line!r}") from None


def read_events(path: Union[str, Path]) -> EventStream:
    """Read an EVT1 file into a canonical EventStream."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise EventParseError(1, "empty file, missing EVT1 header")
    header = lines[0].split()
    if not header or header[0] != EVT_MAGIC:
        raise EventParseError(1, f"missing {EVT_MAGIC} header")
    width, height, t_start, t_end = _parse_ints(" ".join(header[1:]), 4, 1)
    if width <= 0 or height <= 0:
        raise EventValidationError(f"line 1: sensor size {width}x{height} must be positive")

    n = len(lines) - 1
    t = np.empty(n, dtype=np.int64)
    x = np.empty(n, dtype=np.int64)
    y = np.empty(n, dtype=np.int64)
    p = np.empty(n, dtype=np.int64)
    count = 0
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        et, ex, ey, ep = _parse_ints(line, 4, line_no)
        if ep not in (1, -1):
            raise EventParseError(line_no, f"polarity must be 1 or -1, got {ep}")
        if not 0 <= ex < width:
            raise EventValidationError(f"line {line_no}: event (t={et} x={ex} y={ey} p={ep}) has x outside [0, {width})")
        if not 0 <= ey < height:
            raise EventValidationError(f"line {line_no}: event (t={et} x={ex} y={ey} p={ep}) has y outside [0, {height})")
        if not t_start <= et <= t_end:
            raise EventValidationError(
                f"line {line_no}: event (t={et} x={ex} y={ey} p={ep}) outside [{t_start}, {t_end}]"
            )
        t[count], x[count], y[count], p[count] = et, ex, ey, ep
        count += 1

    stream = EventStream.from_arrays(t[:count], x[:count], y[:count], p[:count], width, height, t_start, t_end)
    logger.debug(f"[events] read_events path={path} count={count}")
    return stream


def format_events(stream: EventStream) -> str:
    lines = [f"{EVT_MAGIC} {stream.sensor_width} {stream.sensor_height} {stream.t_start} {stream.t_end}"]
    cols = zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist())
    lines.extend(f"{t} {x} {y} {p}" for t, x, y, p in cols)
    return "\n".join(lines) + "\n"


def write_events(stream: EventStream, path: Union[str, Path]) -> Path:
    """Write the canonical EVT1 form of ``stream`` (atomic)."""
    return atomic_write_text(path, format_events(stream))


# -------------------- Voxel files --------------------


def _grid_array(obj: Union[VoxelGrid, SurvivalMap, np.ndarray]) -> np.ndarray:
    if isinstance(obj, VoxelGrid):
        return obj.data
    if isinstance(obj, SurvivalMap):
        return obj.maps
    arr = np.asarray(obj, dtype=np.float64)
    if arr.ndim != 3:
        raise EventValidationError(f"VOX1 data must be 3-D, got shape {arr.shape}")
    return arr


def format_voxel(obj: Union[VoxelGrid, SurvivalMap, np.ndarray]) -> str:
    data = _grid_array(obj)
    T, H, W = data.shape
    lines = [f"{VOX_MAGIC} {T} {H} {W}"]
    for row in data.reshape(T * H, W).tolist():
        lines.append(" ".join(repr(float(v) + 0.0) for v in row))
    return "\n".join(lines) + "\n"


def write_voxel(obj: Union[VoxelGrid, SurvivalMap, np.ndarray], path: Union[str, Path]) -> Path:
    """Dump a voxel grid (or survival map) in VOX1 format (atomic)."""
    return atomic_write_text(path, format_voxel(obj))


def _read_vox_array(path: Union[str, Path]) -> np.ndarray:
    with open(path, encoding="utf-8") as f:
        tokens = f.read().split()
    if len(tokens) < 4 or tokens[0] != VOX_MAGIC:
        raise EventParseError(1, f"missing {VOX_MAGIC} header")
    try:
        T, H, W = (int(v) for v in tokens[1:4])
    except ValueError:
        raise EventParseError(1, f"bad {VOX_MAGIC} dimensions {tokens[1:4]}") from None
    if min(T, H, W) < 1:
        raise EventParseError(1, f"{VOX_MAGIC} dimensions must be positive, got {T} {H} {W}")
    values = tokens[4:]
    if len(values) != T * H * W:
        raise EventParseError(1, f"expected {T * H * W} values, found {len(values)}")
    try:
        data = np.array([float(v) for v in values], dtype=np.float64)
    except ValueError as e:
        raise EventParseError(1, f"non-numeric voxel value ({e})") from None
    return data.reshape(T, H, W)


def read_voxel(path: Union[str, Path]) -> VoxelGrid:
    return VoxelGrid(data=_read_vox_array(path))


def read_survival_map(path: Union[str, Path]) -> SurvivalMap:
    return SurvivalMap(maps=_read_vox_array(path))

import numpy as np
import pytest

from errors import ConfigError, DegenerateSpanError, EventParseError, EventValidationError, ShapeMismatchError
from events import (
    bin_indices,
    encode_voxel,
    format_events,
    read_events,
    read_survival_map,
    read_voxel,
    stream_stats,
    write_events,
    write_voxel,
)
from models import Event, EventStream, SurvivalMap, VoxelGrid


def naive_voxel(stream: EventStream, T: int) -> np.ndarray:
    grid = np.zeros((T, stream.sensor_height, stream.sensor_width))
    span = stream.t_end - stream.t_start
    for e in stream.iter_events():
        tau = (e.t - stream.t_start) * T // (span + 1)
        grid[tau, e.y, e.x] += e.polarity
    return grid


def test_from_arrays_sorts_canonically():
    s = EventStream.from_arrays([5, 1, 5, 1], [2, 0, 1, 0], [0, 0, 0, 0], [1, 1, -1, -1], 4, 4, 0, 10)
    assert s.t.tolist() == [1, 1, 5, 5]
    assert s.p.tolist() == [-1, 1, -1, 1]
    assert s.x.tolist() == [0, 0, 1, 2]


def test_direct_construction_rejects_unsorted():
    with pytest.raises(EventValidationError, match="canonical"):
        EventStream(t=[5, 1], x=[0, 0], y=[0, 0], p=[1, 1], sensor_width=2, sensor_height=2, t_start=0, t_end=10)


def test_out_of_bounds_event_is_named():
    with pytest.raises(EventValidationError, match="x >= sensor_width"):
        EventStream.from_arrays([0], [4], [0], [1], 4, 4, 0, 10)


def test_from_events_matches_from_arrays():
    events = [Event(t=3, x=1, y=2, polarity=-1), Event(t=1, x=0, y=0, polarity=1)]
    s = EventStream.from_events(events, 4, 4, 0, 5)
    assert [e.t for e in s.iter_events()] == [1, 3]


def test_encode_voxel_matches_loop(stream):
    for T in (1, 3, 6):
        grid = encode_voxel(stream, T)
        np.testing.assert_array_equal(grid.data, naive_voxel(stream, T))


def test_encode_voxel_conserves_polarity_sum(stream):
    grid = encode_voxel(stream, 6)
    assert grid.data.sum() == stream.p.sum()
    assert grid.shape == (6, stream.sensor_height, stream.sensor_width)


def test_encode_voxel_is_additive_over_disjoint_streams(stream):
    half = len(stream) // 2
    parts = [
        EventStream.from_arrays(
            stream.t[sl], stream.x[sl], stream.y[sl], stream.p[sl],
            stream.sensor_width, stream.sensor_height, stream.t_start, stream.t_end,
        )
        for sl in (slice(None, half), slice(half, None))
    ]
    for T in (1, 6):
        np.testing.assert_array_equal(
            encode_voxel(stream, T).data, encode_voxel(parts[0], T).data + encode_voxel(parts[1], T).data
        )


def test_last_timestamp_falls_in_last_bin():
    s = EventStream.from_arrays([0, 99], [0, 1], [0, 0], [1, 1], 2, 1, 0, 99)
    tau = bin_indices(s, 6)
    assert tau.tolist() == [0, 5]


def test_empty_stream_gives_zero_grid():
    s = EventStream.from_arrays([], [], [], [], 3, 2, 0, 10)
    assert encode_voxel(s, 4).nonzero_count() == 0


def test_degenerate_span_rejected():
    s = EventStream.from_arrays([5], [0], [0], [1], 2, 2, 5, 5)
    with pytest.raises(DegenerateSpanError):
        encode_voxel(s, 6)


def test_bin_count_must_be_positive(stream):
    with pytest.raises(ConfigError):
        encode_voxel(stream, 0)


def test_stream_stats(stream):
    stats = stream_stats(stream)
    assert stats.count_pos + stats.count_neg == len(stream)
    assert stats.mean_rate_per_second == pytest.approx(len(stream) / (9999 / 1e6))
    zero = stream_stats(EventStream.from_arrays([3], [0], [0], [1], 1, 1, 3, 3))
    assert zero.zero_span and zero.mean_rate_per_second == 0.0


def test_event_file_round_trip(tmp_path, stream):
    path = write_events(stream, tmp_path / "s.evt")
    assert read_events(path).equals(stream)
    assert path.read_text().splitlines()[0] == "EVT1 24 20 0 9999"


def test_event_file_output_is_canonical(tmp_path, stream):
    write_events(stream, tmp_path / "a.evt")
    assert format_events(read_events(tmp_path / "a.evt")) == (tmp_path / "a.evt").read_text()


def test_event_parse_error_carries_line_number(tmp_path):
    path = tmp_path / "bad.evt"
    path.write_text("EVT1 4 4 0 10\n1 0 0 1\n2 0 x 1\n")
    with pytest.raises(EventParseError) as err:
        read_events(path)
    assert err.value.line_no == 3


def test_event_bad_polarity_is_parse_error(tmp_path):
    path = tmp_path / "bad.evt"
    path.write_text("EVT1 4 4 0 10\n1 0 0 0\n")
    with pytest.raises(EventParseError, match="line 2"):
        read_events(path)


def test_event_outside_sensor_is_validation_error(tmp_path):
    path = tmp_path / "bad.evt"
    path.write_text("EVT1 4 4 0 10\n1 0 0 1\n2 9 0 1\n")
    with pytest.raises(EventValidationError, match="line 3"):
        read_events(path)


def test_missing_header(tmp_path):
    path = tmp_path / "bad.evt"
    path.write_text("1 0 0 1\n")
    with pytest.raises(EventParseError, match="EVT1"):
        read_events(path)


def test_voxel_file_round_trip(tmp_path, grid):
    path = write_voxel(grid, tmp_path / "g.vox")
    np.testing.assert_array_equal(read_voxel(path).data, grid.data)


def test_survival_map_file(tmp_path):
    maps = SurvivalMap(maps=np.full((2, 3, 4), 0.75))
    path = write_voxel(maps, tmp_path / "m.vox")
    assert read_survival_map(path).maps.tolist() == maps.maps.tolist()


def test_voxel_value_count_checked(tmp_path):
    path = tmp_path / "bad.vox"
    path.write_text("VOX1 1 2 2\n0 1 2\n")
    with pytest.raises(EventParseError, match="expected 4 values"):
        read_voxel(path)


def test_voxel_grid_must_be_3d():
    with pytest.raises(ShapeMismatchError):
        VoxelGrid(data=np.zeros((3, 3)))

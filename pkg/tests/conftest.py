from pathlib import Path

import numpy as np
import pytest

from dvs import write_frame, write_frames
from events import write_events
from models import EventStream, FrameSequence, VoxelGrid

REFERENCE_DIR = Path(__file__).resolve().parent.parent / "data" / "reference"


def ramp_frames(K: int = 5, H: int = 16, W: int = 16) -> FrameSequence:
    """Brightness rising over time, faster towards the right edge."""
    xs = np.linspace(0.0, 1.0, W)[None, :].repeat(H, axis=0)
    frames = np.stack([np.clip(0.1 + 0.2 * k * xs, 0.0, 1.0) for k in range(K)])
    timestamps = [k * 1000 for k in range(K)]
    return FrameSequence(frames=frames, timestamps=timestamps)


def random_grid(seed: int = 0, shape=(6, 20, 24), density: float = 0.4) -> VoxelGrid:
    rng = np.random.default_rng(seed)
    data = rng.integers(-3, 4, size=shape).astype(np.float64)
    data[rng.random(shape) > density] = 0.0
    return VoxelGrid(data=data, t_start=0, t_end=999)


def random_stream(seed: int = 0, n: int = 400, W: int = 24, H: int = 20, t_end: int = 9999) -> EventStream:
    rng = np.random.default_rng(seed)
    return EventStream.from_arrays(
        rng.integers(0, t_end + 1, n),
        rng.integers(0, W, n),
        rng.integers(0, H, n),
        rng.choice([-1, 1], n),
        sensor_width=W,
        sensor_height=H,
        t_start=0,
        t_end=t_end,
    )


@pytest.fixture
def ramp():
    return ramp_frames()


@pytest.fixture
def grid():
    return random_grid()


@pytest.fixture
def stream():
    return random_stream()


@pytest.fixture
def frames_dir(tmp_path, ramp):
    """Frames written as 8-bit PGM; values are re-read quantized."""
    directory = tmp_path / "frames"
    write_frames(ramp, directory)
    return directory


@pytest.fixture
def dataset(tmp_path, ramp):
    """Dataset root with frames, events.evt and one blur/sharp pair."""
    from dvs import read_frames, simulate_events, synthesize_blur
    from models import DvsConfig

    root = tmp_path / "dataset"
    write_frames(ramp, root / "frames")
    seq = read_frames(root / "frames")
    write_events(simulate_events(seq, DvsConfig(theta=0.1), seed=0), root / "events.evt")
    write_frame(synthesize_blur(seq), root / "blur" / "000000.pgm")
    write_frame(seq.frames[-1], root / "sharp" / "000000.pgm")
    return root

"""DVS triggering model.

Log-intensity increments, mixed Poisson + Gaussian noise, reference-crossing
event generation from frame sequences, blur synthesis by frame averaging,
Monte-Carlo FPR/TPR/UR estimators and spurious-count noise injection.

Noise is defined per frame interval: one draw of ``N = (N_p - lam) + N_g``
per pixel per frame (``N_p`` uncentered when ``NoiseModel.centered`` is off).
"""
from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from logging import getLogger
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image

from errors import ConfigError, DatasetError, ShapeMismatchError
from models import DvsConfig, Estimate, EventStream, FrameSequence, NoiseModel, VoxelGrid
from rng import NS_FRAME, NS_INJECT, NS_NOISE, chunk_sizes, substream

logger = getLogger(__name__)

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
FRAME_NAME = re.compile(r"^(\d{6})\.(pgm|ppm)$", re.IGNORECASE)


def log_increment(frame_t: np.ndarray, frame_prev: np.ndarray, log_floor: float = 1.0 / 255.0) -> np.ndarray:
    """log(frame_t + floor) - log(frame_prev + floor), elementwise."""
    frame_t = np.asarray(frame_t, dtype=np.float64)
    frame_prev = np.asarray(frame_prev, dtype=np.float64)
    if frame_t.shape != frame_prev.shape:
        raise ShapeMismatchError(f"frame shapes differ: {frame_t.shape} vs {frame_prev.shape}")
    return np.log(frame_t + log_floor) - np.log(frame_prev + log_floor)


# -------------------- Noise sampling --------------------


def draw_noise(noise: NoiseModel, size, rng: np.random.Generator) -> np.ndarray:
    """One noise sample per element: Poisson part first, then Gaussian."""
    out = np.zeros(size, dtype=np.float64)
    if noise.lam > 0.0:
        counts = rng.poisson(noise.lam, size).astype(np.float64)
        out += counts - noise.lam if noise.centered else counts
    if noise.sigma_n > 0.0:
        out += rng.normal(0.0, noise.sigma_n, size)
    return out


def noise_samples(noise: NoiseModel, n_samples: int, seed: int, workers: int = 1) -> np.ndarray:
    """``n_samples`` noise draws, chunk ``k`` taken from substream (seed, k).

    The result does not depend on ``workers``.
    """
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    sizes = chunk_sizes(n_samples)

    def _chunk(k: int) -> np.ndarray:
        return draw_noise(noise, sizes[k], substream(seed, NS_NOISE, k))

    if workers <= 1 or len(sizes) == 1:
        parts = [_chunk(k) for k in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk, range(len(sizes))))
    return np.concatenate(parts)


def _estimate(hits: int, n: int) -> Estimate:
    p = hits / n
    return Estimate(value=p, stderr=math.sqrt(p * (1.0 - p) / n), n_samples=n)


def fpr(theta: float, noise: NoiseModel, n_samples: int = 100_000, seed: int = 0, workers: int = 1) -> Estimate:
    """P(|N| >= theta): probability that noise alone triggers an event."""
    n = noise_samples(noise, n_samples, seed, workers)
    return _estimate(int(np.count_nonzero(np.abs(n) >= theta)), n_samples)


def tpr(
    theta: float, S: float, noise: NoiseModel, n_samples: int = 100_000, seed: int = 0, workers: int = 1
) -> Estimate:
    """P(|S + N| >= theta): probability that a true signal S triggers an event."""
    n = noise_samples(noise, n_samples, seed, workers)
    return _estimate(int(np.count_nonzero(np.abs(S + n) >= theta)), n_samples)


def ur_given_s(
    theta: float, S: float, noise: NoiseModel, n_samples: int = 100_000, seed: int = 0, workers: int = 1
) -> Estimate:
    """Under-reporting ratio 1 - TPR(theta | S)."""
    est = tpr(theta, S, noise, n_samples, seed, workers)
    return Estimate(value=1.0 - est.value, stderr=est.stderr, n_samples=est.n_samples)


def ur_expected(
    theta: float,
    S_samples: Sequence[float],
    noise: NoiseModel,
    n_samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
) -> Estimate:
    """Mean of UR(theta | S) over the given signal samples.

    All signals share one noise draw (common random numbers).
    """
    signals = np.asarray(list(S_samples), dtype=np.float64)
    if signals.size == 0:
        raise ConfigError("S_samples must be non-empty")
    n = noise_samples(noise, n_samples, seed, workers)
    urs = []
    variances = []
    for s in signals:
        p = np.count_nonzero(np.abs(s + n) >= theta) / n_samples
        urs.append(1.0 - p)
        variances.append(p * (1.0 - p) / n_samples)
    k = len(signals)
    return Estimate(value=float(np.mean(urs)), stderr=math.sqrt(sum(variances)) / k, n_samples=n_samples)


# -------------------- Event generation --------------------


def simulate_events(seq: FrameSequence, cfg: DvsConfig, seed: int = 0) -> EventStream:
    """Emit events by per-pixel reference crossing.

    Each pixel latches a reference log-intensity (first frame). At frame k the
    noisy log-intensity is compared with the reference; while the residual
    reaches theta an event of the residual's sign fires and the reference
    moves by +/-theta. Events carry the frame timestamp. With a silent noise
    model no random numbers are drawn, so the output is seed-independent.
    """
    if len(seq) < 2:
        raise ConfigError("event simulation needs at least 2 frames")
    theta = cfg.theta
    ref = np.log(seq.frames[0] + cfg.log_floor)
    ts: list[np.ndarray] = []
    xs: list[np.ndarray] = []
    ys: list[np.ndarray] = []
    ps: list[np.ndarray] = []

    for k in range(1, len(seq)):
        current = np.log(seq.frames[k] + cfg.log_floor)
        if cfg.noise.is_silent:
            noisy = current
        else:
            noisy = current + draw_noise(cfg.noise, current.shape, substream(seed, NS_FRAME, k))
        residual = noisy - ref
        t_k = int(seq.timestamps[k])
        while True:
            fire = np.abs(residual) >= theta
            if not fire.any():
                break
            yy, xx = np.nonzero(fire)
            pol = np.where(residual[yy, xx] > 0, 1, -1)
            ts.append(np.full(yy.shape[0], t_k, dtype=np.int64))
            xs.append(xx)
            ys.append(yy)
            ps.append(pol)
            ref[yy, xx] += pol * theta
            residual = noisy - ref

    def _cat(parts: list[np.ndarray]) -> np.ndarray:
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    stream = EventStream.from_arrays(
        _cat(ts),
        _cat(xs),
        _cat(ys),
        _cat(ps),
        sensor_width=seq.width,
        sensor_height=seq.height,
        t_start=int(seq.timestamps[0]),
        t_end=int(seq.timestamps[-1]),
    )
    logger.info(f"[dvs] simulate_events frames={len(seq)} theta={theta} events={len(stream)}")
    return stream


def synthesize_blur(seq: Union[FrameSequence, np.ndarray]) -> np.ndarray:
    """Blurry image as the arithmetic mean of the frames."""
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq, dtype=np.float64)
    if frames.ndim < 3 or frames.shape[0] < 1:
        raise ConfigError("blur synthesis needs at least one frame")
    return frames.mean(axis=0)


def noise_inject(grid: VoxelGrid, ratio: float, seed: int = 0) -> VoxelGrid:
    """Add spurious +/-1 counts to uniformly chosen distinct cells.

    The number of injected counts is round-half-up(ratio * nonzero cells).
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"noise ratio must lie in [0, 1], got {ratio}")
    count = injected_count(grid, ratio)
    if count == 0:
        return grid.with_data(grid.data)
    rng = substream(seed, NS_INJECT)
    cells = rng.choice(grid.data.size, size=count, replace=False)
    signs = rng.integers(0, 2, size=count).astype(np.float64) * 2.0 - 1.0
    out = grid.data.copy().reshape(-1)
    out[cells] += signs
    return grid.with_data(out.reshape(grid.shape))


def injected_count(grid: VoxelGrid, ratio: float) -> int:
    return int(math.floor(ratio * grid.nonzero_count() + 0.5))


# -------------------- Frame I/O --------------------


def read_image(path: Union[str, Path], gray: bool = True) -> np.ndarray:
    """Load a PGM/PPM (or any Pillow-readable) image scaled to [0, 1].

    Color images are converted by luminance 0.299R + 0.587G + 0.114B when
    ``gray`` is set, otherwise returned as H x W x 3.
    """
    with Image.open(path) as img:
        mode = img.mode
        arr = np.asarray(img)
    if mode in ("I;16", "I;16B", "I"):
        data = arr.astype(np.float64) / 65535.0
    else:
        data = arr.astype(np.float64) / 255.0
    if data.ndim == 3:
        data = data[..., :3]
        if gray:
            r, g, b = LUMA_WEIGHTS
            data = r * data[..., 0] + g * data[..., 1] + b * data[..., 2]
    return np.clip(data, 0.0, 1.0)


def write_frame(image: np.ndarray, path: Union[str, Path]) -> Path:
    """Write a [0, 1] grayscale image as 8-bit PGM."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PPM")
    return path


def frame_files(directory: Union[str, Path]) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.is_file() and FRAME_NAME.match(p.name))


def read_frames(directory: Union[str, Path]) -> FrameSequence:
    """Read ``%06d.pgm`` / ``%06d.ppm`` frames plus ``timestamps.txt``."""
    directory = Path(directory)
    files = frame_files(directory)
    if not files:
        raise DatasetError(f"no %06d.pgm/.ppm frames in {directory}")
    ts_path = directory / "timestamps.txt"
    if not ts_path.exists():
        raise DatasetError(f"missing timestamps file {ts_path}")
    timestamps = []
    for line_no, line in enumerate(ts_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            timestamps.append(int(line.strip()))
        except ValueError:
            raise DatasetError(f"{ts_path}:{line_no}: bad timestamp {line!r}") from None
    if len(timestamps) != len(files):
        raise DatasetError(f"{len(files)} frames but {len(timestamps)} timestamps in {ts_path}")
    frames = np.stack([read_image(f, gray=True) for f in files])
    logger.info(f"[dvs] read_frames dir={directory} count={len(files)} shape={frames.shape[1:]}")
    return FrameSequence(frames=frames, timestamps=timestamps)


def write_frames(seq: FrameSequence, directory: Union[str, Path]) -> list[Path]:
    """Write a FrameSequence in the directory layout read_frames expects."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [write_frame(f, directory / f"{i:06d}.pgm") for i, f in enumerate(seq.frames)]
    (directory / "timestamps.txt").write_text(
        "".join(f"{int(t)}\n" for t in seq.timestamps), encoding="utf-8"
    )
    return paths

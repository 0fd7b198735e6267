import math
import warnings

import numpy as np
import pytest
from PIL import Image
from scipy import stats
from scipy.special import erfc

from dvs import (
    draw_noise,
    fpr,
    injected_count,
    log_increment,
    noise_inject,
    noise_samples,
    read_frames,
    read_image,
    simulate_events,
    synthesize_blur,
    tpr,
    ur_expected,
    ur_given_s,
    write_frame,
    write_frames,
)
from errors import ConfigError, DatasetError, ShapeMismatchError
from models import DvsConfig, EventStream, FrameSequence, NoiseModel
from rng import MC_CHUNK, NS_FRAME, substream
from tests.conftest import ramp_frames


def loop_events(seq: FrameSequence, cfg: DvsConfig, seed: int) -> EventStream:
    """Pixel-by-pixel reference-crossing oracle."""
    K, H, W = seq.frames.shape
    noises = [None] + [
        None if cfg.noise.is_silent else draw_noise(cfg.noise, (H, W), substream(seed, NS_FRAME, k))
        for k in range(1, K)
    ]
    ref = np.log(seq.frames[0] + cfg.log_floor)
    t, x, y, p = [], [], [], []
    for k in range(1, K):
        current = np.log(seq.frames[k] + cfg.log_floor)
        for yy in range(H):
            for xx in range(W):
                value = current[yy, xx] if noises[k] is None else current[yy, xx] + noises[k][yy, xx]
                while abs(value - ref[yy, xx]) >= cfg.theta:
                    pol = 1 if value - ref[yy, xx] > 0 else -1
                    t.append(int(seq.timestamps[k]))
                    x.append(xx)
                    y.append(yy)
                    p.append(pol)
                    ref[yy, xx] += pol * cfg.theta
    return EventStream.from_arrays(t, x, y, p, W, H, int(seq.timestamps[0]), int(seq.timestamps[-1]))


# -------------------- Triggering probabilities --------------------


def test_log_increment():
    a = np.array([[0.5, 1.0]])
    b = np.array([[0.25, 1.0]])
    np.testing.assert_allclose(log_increment(a, b, 0.0), [[math.log(2.0), 0.0]])


def test_log_increment_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        log_increment(np.zeros((2, 2)), np.zeros((2, 3)))


def test_fpr_gaussian_matches_closed_form():
    theta = 0.2
    est = fpr(theta, NoiseModel(sigma_n=theta), n_samples=200_000, seed=3)
    expected = erfc(1.0 / math.sqrt(2.0))  # 2 * Phi(-1)
    assert abs(est.value - expected) <= 4 * math.sqrt(expected * (1 - expected) / 200_000)
    assert est.n_samples == 200_000


def test_fpr_centered_poisson_matches_pmf():
    # |k - 0.5| >= 0.6 iff k >= 2
    est = fpr(0.6, NoiseModel(lam=0.5), n_samples=200_000, seed=1)
    expected = stats.poisson.sf(1, 0.5)
    assert abs(est.value - expected) <= 4 * math.sqrt(expected * (1 - expected) / 200_000)


def test_uncentered_poisson_shifts_mass():
    # raw counts: |k| >= 0.6 iff k >= 1
    est = fpr(0.6, NoiseModel(lam=0.5, centered=False), n_samples=100_000, seed=1)
    expected = stats.poisson.sf(0, 0.5)
    assert abs(est.value - expected) <= 4 * math.sqrt(expected * (1 - expected) / 100_000)


def test_silent_noise_is_deterministic():
    silent = NoiseModel()
    assert fpr(0.1, silent, n_samples=1000).value == 0.0
    assert tpr(0.1, 0.1, silent, n_samples=1000).value == 1.0
    assert ur_given_s(0.2, 0.1, silent, n_samples=1000).value == 1.0


def test_noise_samples_independent_of_workers():
    noise = NoiseModel(lam=0.3, sigma_n=0.05)
    n = 3 * MC_CHUNK + 17
    serial = noise_samples(noise, n, seed=11, workers=1)
    parallel = noise_samples(noise, n, seed=11, workers=4)
    np.testing.assert_array_equal(serial, parallel)
    assert serial.shape == (n,)


def test_noise_samples_prefix_stable():
    noise = NoiseModel(sigma_n=0.1)
    short = noise_samples(noise, MC_CHUNK, seed=5)
    long = noise_samples(noise, 2 * MC_CHUNK, seed=5)
    np.testing.assert_array_equal(long[:MC_CHUNK], short)


def test_gaussian_threshold_trade_off():
    sigma = 0.1
    noise = NoiseModel(sigma_n=sigma)
    thetas = [f * sigma for f in (0.1, 0.5, 1.0, 2.0, 3.0)]
    fprs = [fpr(theta, noise, n_samples=1_000_000, seed=13).value for theta in thetas]
    urs = [ur_given_s(theta, sigma, noise, n_samples=1_000_000, seed=13).value for theta in thetas]
    assert all(b <= a for a, b in zip(fprs, fprs[1:]))
    assert all(b >= a for a, b in zip(urs, urs[1:]))
    assert abs(fprs[2] - 0.31731) <= 0.003


def test_ur_non_decreasing_in_theta():
    noise = NoiseModel(lam=0.2, sigma_n=0.05)
    urs = [ur_given_s(theta, 0.25, noise, n_samples=50_000, seed=2).value for theta in (0.1, 0.2, 0.3, 0.4)]
    assert all(b >= a for a, b in zip(urs, urs[1:]))


def test_ur_non_increasing_in_signal():
    noise = NoiseModel(sigma_n=0.1)
    urs = [ur_given_s(0.3, s, noise, n_samples=50_000, seed=2).value for s in (0.0, 0.2, 0.4, 0.8)]
    assert all(b <= a for a, b in zip(urs, urs[1:]))


def test_ur_expected_is_mean_over_signals():
    noise = NoiseModel(sigma_n=0.1)
    signals = [0.1, 0.25, 0.5]
    est = ur_expected(0.3, signals, noise, n_samples=30_000, seed=9)
    singles = [ur_given_s(0.3, s, noise, n_samples=30_000, seed=9).value for s in signals]
    assert est.value == pytest.approx(np.mean(singles), abs=1e-12)
    with pytest.raises(ConfigError):
        ur_expected(0.3, [], noise)


# -------------------- Event generation --------------------


def test_simulate_events_matches_loop_without_noise(ramp):
    cfg = DvsConfig(theta=0.15)
    assert simulate_events(ramp, cfg, seed=0).equals(loop_events(ramp, cfg, 0))


def test_simulate_events_matches_loop_with_noise(ramp):
    cfg = DvsConfig(theta=0.2, noise=NoiseModel(lam=0.1, sigma_n=0.05))
    assert simulate_events(ramp, cfg, seed=4).equals(loop_events(ramp, cfg, 4))


def test_rising_ramp_emits_positive_events(ramp):
    s = simulate_events(ramp, DvsConfig(theta=0.1))
    assert len(s) > 0
    assert (s.p == 1).all()
    assert (s.t_start, s.t_end) == (0, 4000)


def test_event_count_non_increasing_in_theta(ramp):
    counts = [len(simulate_events(ramp, DvsConfig(theta=th))) for th in (0.05, 0.1, 0.2, 0.4)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert counts[0] > counts[-1]


def test_static_scene_without_noise_is_silent():
    frames = np.full((4, 8, 8), 0.5)
    seq = FrameSequence(frames=frames, timestamps=[0, 10, 20, 30])
    assert len(simulate_events(seq, DvsConfig(theta=0.05), seed=123)) == 0


@pytest.mark.parametrize("before, after, polarity", [(0.75, 0.25, -1), (0.25, 0.75, 1)])
def test_single_pixel_step_of_two_thresholds(before, after, polarity):
    # with log_floor 0.25 the pixel moves between log(1) and log(0.5)
    frames = np.full((2, 3, 3), 0.5)
    frames[0, 1, 1], frames[1, 1, 1] = before, after
    step = np.log(after + 0.25) - np.log(before + 0.25)
    cfg = DvsConfig(theta=abs(step) / 2.0, log_floor=0.25)
    stream = simulate_events(FrameSequence(frames=frames, timestamps=[0, 1000]), cfg)
    assert len(stream) == 2
    assert stream.x.tolist() == [1, 1] and stream.y.tolist() == [1, 1]
    assert stream.p.tolist() == [polarity, polarity]


def test_silent_noise_output_is_seed_independent(ramp):
    cfg = DvsConfig(theta=0.1)
    assert simulate_events(ramp, cfg, seed=1).equals(simulate_events(ramp, cfg, seed=2))


def test_simulate_needs_two_frames():
    seq = FrameSequence(frames=np.zeros((1, 4, 4)), timestamps=[0])
    with pytest.raises(ConfigError):
        simulate_events(seq, DvsConfig(theta=0.1))


def test_synthesize_blur_is_frame_mean(ramp):
    np.testing.assert_allclose(synthesize_blur(ramp), ramp.frames.mean(axis=0))


# -------------------- Noise injection --------------------


def test_noise_inject_adds_expected_count(grid):
    nnz = grid.nonzero_count()
    noisy = noise_inject(grid, 0.1, seed=7)
    count = injected_count(grid, 0.1)
    assert count == math.floor(0.1 * nnz + 0.5)
    diff = noisy.data - grid.data
    assert np.count_nonzero(diff) == count
    assert set(np.unique(diff[diff != 0])) <= {-1.0, 1.0}


def test_noise_inject_zero_ratio_and_determinism(grid):
    np.testing.assert_array_equal(noise_inject(grid, 0.0).data, grid.data)
    np.testing.assert_array_equal(noise_inject(grid, 0.2, seed=3).data, noise_inject(grid, 0.2, seed=3).data)
    with pytest.raises(ConfigError):
        noise_inject(grid, 1.5)


# -------------------- Frame I/O --------------------


def test_frames_round_trip_quantized(tmp_path, ramp):
    write_frames(ramp, tmp_path)
    seq = read_frames(tmp_path)
    assert seq.timestamps.tolist() == ramp.timestamps.tolist()
    np.testing.assert_allclose(seq.frames, ramp.frames, atol=0.5 / 255 + 1e-12)


def test_write_frame_is_8_bit_grayscale_without_warnings(tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        path = write_frame(np.array([[0.0, 0.5], [1.0, 0.25]]), tmp_path / "f.pgm")
    with Image.open(path) as img:
        assert img.mode == "L"
        assert np.asarray(img).tolist() == [[0, 128], [255, 64]]


def test_read_frames_missing_timestamps(tmp_path, ramp):
    write_frames(ramp, tmp_path)
    (tmp_path / "timestamps.txt").unlink()
    with pytest.raises(DatasetError, match="timestamps"):
        read_frames(tmp_path)


def test_read_frames_count_mismatch(tmp_path, ramp):
    write_frames(ramp, tmp_path)
    (tmp_path / "timestamps.txt").write_text("0\n1000\n")
    with pytest.raises(DatasetError, match="5 frames but 2 timestamps"):
        read_frames(tmp_path)


def test_read_image_rgb_luminance(tmp_path):
    rgb = np.zeros((2, 2, 3), dtype=np.uint8)
    rgb[..., 0] = 255
    Image.fromarray(rgb).save(tmp_path / "red.ppm")
    np.testing.assert_allclose(read_image(tmp_path / "red.ppm"), np.full((2, 2), 0.299))
    assert read_image(tmp_path / "red.ppm", gray=False).shape == (2, 2, 3)


def test_read_image_16_bit(tmp_path):
    data = np.array([[0, 65535], [32768, 1000]], dtype=np.uint16)
    Image.fromarray(data).save(tmp_path / "deep.png")
    np.testing.assert_allclose(read_image(tmp_path / "deep.png"), data / 65535.0)


def test_ramp_fixture_is_monotone():
    seq = ramp_frames()
    assert (np.diff(seq.frames, axis=0) >= 0).all()

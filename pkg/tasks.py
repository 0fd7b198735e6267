import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from logging import getLogger
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import yaml
from dotenv import dotenv_values, load_dotenv

from dvs import (
    FRAME_NAME,
    injected_count,
    noise_inject,
    read_frames,
    read_image,
    simulate_events,
    synthesize_blur,
    write_frame,
)
from errors import ConfigError, DatasetError, PairingError
from events import encode_voxel, read_events, read_voxel, write_events, write_voxel
from metrics import compare_curves, psnr, read_curve_csv, ssim
from models import (
    ComparisonReport,
    DatasetContents,
    DvsConfig,
    FeatureStats,
    ImagePair,
    LevelCheck,
    Manifest,
    ManifestEntry,
    MrmConfig,
    RobustnessCurve,
    SimulateConfig,
    SweepConfig,
    SweepResult,
    SweepRow,
    VoxelGrid,
)
from net.interact import esem_forward, msem_forward
from net.mrm import mrm_forward
from net.weights import NetWeights, read_weights
from rng import NS_LEVEL, derive_seed
from rps import empirical_ur, survival_map_from_alpha, thin
from utils import atomic_write_text, config_hash, sha256_file

logger = getLogger(__name__)

load_dotenv(dotenv_path=os.path.join(os.path.dirname(__file__), ".env"), override=False)

SEED_ENV = "EVROBUST_SEED"
IMAGE_SUFFIXES = {".pgm", ".ppm", ".png"}
SWEEP_COLUMNS = (
    "level",
    "empirical_ur",
    "nonzero_before",
    "nonzero_after",
    "events_before",
    "events_after",
    "psnr",
    "ssim",
    "feat_mean",
    "feat_var",
    "feat_max",
)


# ==================== CONFIG ====================


def _config_keys(model) -> set[str]:
    keys = set()
    for name, field in model.model_fields.items():
        keys.add(name)
        if field.alias:
            keys.add(field.alias)
    return keys


def _read_config_file(path: Union[str, Path]) -> dict[str, Any]:
    """Parse a flat ``key = value`` file (``#`` comments) with python-dotenv."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    return {k.strip(): ("" if v is None else v.strip()) for k, v in values.items()}


def _prepare(model, path: Optional[Union[str, Path]], overrides: Optional[dict], path_keys: tuple[str, ...]) -> dict:
    values: dict[str, Any] = {}
    base = None
    if path is not None:
        values.update(_read_config_file(path))
        base = Path(path).resolve().parent
    unknown = sorted(set(values) - _config_keys(model))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    # file paths are relative to the config file
    for key in path_keys:
        v = values.get(key)
        if base is not None and v and not Path(v).is_absolute():
            values[key] = str(base / v)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "lambda" in values:
        values.setdefault("lam", values.pop("lambda"))
    env_seed = (os.environ.get(SEED_ENV) or "").strip()
    if env_seed:
        values["seed"] = env_seed
    return values


def load_sweep_config(path: Optional[Union[str, Path]] = None, overrides: Optional[dict] = None) -> SweepConfig:
    """Sweep config from file + explicit overrides; EVROBUST_SEED wins for the seed."""
    values = _prepare(SweepConfig, path, overrides, ("dataset", "output", "weights"))
    return SweepConfig.model_validate(values)


def load_simulate_config(path: Optional[Union[str, Path]] = None, overrides: Optional[dict] = None) -> SimulateConfig:
    values = _prepare(SimulateConfig, path, overrides, ("frames", "output"))
    return SimulateConfig.model_validate(values)


# ==================== DATASET ====================


def _image_files(directory: Path) -> dict[str, Path]:
    return {p.name: p for p in sorted(directory.iterdir()) if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}


def _pair_images(root: Path) -> list[ImagePair]:
    blur_dir, sharp_dir = root / "blur", root / "sharp"
    if not blur_dir.is_dir() and not sharp_dir.is_dir():
        return []
    if not blur_dir.is_dir() or not sharp_dir.is_dir():
        present = blur_dir if blur_dir.is_dir() else sharp_dir
        raise PairingError(f"{present} has no counterpart directory")
    blur, sharp = _image_files(blur_dir), _image_files(sharp_dir)
    extra = [f"blur/{n}" for n in sorted(set(blur) - set(sharp))]
    extra += [f"sharp/{n}" for n in sorted(set(sharp) - set(blur))]
    if extra:
        raise PairingError(
            f"blur/ has {len(blur)} images and sharp/ has {len(sharp)}; unpaired: {', '.join(extra)}"
        )
    return [ImagePair(name=n, blur=blur[n], sharp=sharp[n]) for n in sorted(blur)]


def _frames_dir(root: Path) -> Optional[Path]:
    if (root / "frames").is_dir():
        return root / "frames"
    if any(FRAME_NAME.match(p.name) for p in root.iterdir()):
        return root
    return None


def ingest_dataset(path: Union[str, Path]) -> DatasetContents:
    """Discover frames, an event file and blur/sharp pairs under ``path``.

    Layout::

        frames/%06d.pgm + frames/timestamps.txt   (or directly in the root)
        events.evt
        blur/<name>, sharp/<name>                 paired by file name
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    logger.info(f"[task] ingest_dataset start root={root}")

    frames_dir = _frames_dir(root)
    frames = read_frames(frames_dir) if frames_dir is not None else None
    events_path = root / "events.evt"
    events = read_events(events_path) if events_path.is_file() else None
    pairs = _pair_images(root)

    if frames is None and events is None and not pairs:
        raise DatasetError(f"{root}: no frames, events.evt or blur/sharp pairs found")
    if frames is not None and events is not None:
        if (events.sensor_height, events.sensor_width) != (frames.height, frames.width):
            raise DatasetError(
                f"events sensor {events.sensor_width}x{events.sensor_height} does not match frames {frames.width}x{frames.height}"
            )

    residual = None
    if frames is not None and pairs:
        blur = read_image(pairs[0].blur, gray=True)
        expected = synthesize_blur(frames)
        if blur.shape != expected.shape:
            raise DatasetError(f"blur image {pairs[0].blur} shape {blur.shape} != frame shape {expected.shape}")
        residual = float(np.abs(blur - expected).max())

    contents = DatasetContents(root=root, frames=frames, events=events, pairs=pairs, blur_residual=residual)
    logger.info(f"[task] ingest_dataset done {contents.summary()}")
    return contents


# ==================== SWEEP ====================


def _event_grid(contents: DatasetContents, cfg: SweepConfig) -> VoxelGrid:
    if contents.events is not None:
        return encode_voxel(contents.events, cfg.bins)
    if contents.frames is not None:
        dvs_cfg = DvsConfig(theta=cfg.theta, noise=cfg.noise)
        return encode_voxel(simulate_events(contents.frames, dvs_cfg, cfg.seed), cfg.bins)
    raise DatasetError(f"{contents.root}: a sweep needs events.evt or frames to build voxel grids")


def count_image(data: np.ndarray) -> np.ndarray:
    """Per-pixel event count (sum of |cell| over bins)."""
    return np.abs(data).sum(axis=0)


def _reference_image(contents: DatasetContents, grid: VoxelGrid) -> np.ndarray:
    if contents.pairs:
        img = read_image(contents.pairs[0].blur, gray=True)
        if img.shape == (grid.height, grid.width):
            return img
    if contents.frames is not None:
        return synthesize_blur(contents.frames)
    counts = count_image(grid.data)
    peak = counts.max()
    return counts / peak if peak > 0 else counts


def proxy_scores(clean: np.ndarray, perturbed: np.ndarray) -> tuple[float, float]:
    """PSNR/SSIM of the perturbed event-count image against the clean one."""
    a, b = count_image(clean), count_image(perturbed)
    peak = max(float(a.max()), float(b.max()))
    if peak == 0.0:
        return 99.0, 1.0
    a, b = a / peak, b / peak
    return psnr(a, b).db, ssim(a, b)


def _crop_size(cfg: SweepConfig, H: int, W: int) -> int:
    size = min(cfg.crop, H, W)
    size -= size % 2
    if size < 2:
        raise ConfigError(f"sensor {W}x{H} too small for a forward crop")
    return size


def forward_features(data: np.ndarray, image: np.ndarray, cfg: SweepConfig, weights: NetWeights) -> FeatureStats:
    """Run MRM, MSEM and ESEM on a centered crop and summarize the outputs.

    Event feature channel c*T + t holds bin t of the crop; image features
    replicate the image crop over all channels.
    """
    T, H, W = data.shape
    size = _crop_size(cfg, H, W)
    y0, x0 = (H - size) // 2, (W - size) // 2
    vox = data[:, y0 : y0 + size, x0 : x0 + size]
    img = image[y0 : y0 + size, x0 : x0 + size]
    C = weights.cfg.C
    F_E = np.broadcast_to(vox[None], (C, T, size, size)).reshape(1, C * T, size, size)
    F_I = np.broadcast_to(img, (1, C * T, size, size)).copy()

    F_I2, F_E2, fused = mrm_forward(F_I, F_E, weights.cfg, weights.mrm)
    e2i = msem_forward(F_E2, F_I2, weights.msem)
    i2e = esem_forward(F_I2, F_E2, weights.esem)
    out = np.concatenate([fused, e2i, i2e], axis=1)
    return FeatureStats(mean=float(out.mean()), var=float(out.var()), max_abs=float(np.abs(out).max()))


def _abs_total(data: np.ndarray) -> int:
    return int(round(float(np.abs(data).sum())))


def sweep_level(
    grid: VoxelGrid,
    image: np.ndarray,
    cfg: SweepConfig,
    index: int,
    weights: Optional[NetWeights] = None,
) -> SweepRow:
    """Perturb ``grid`` at ``cfg.levels[index]``.

    Under-reporting levels share the thinning uniforms of ``cfg.seed`` so the
    kept cells of a higher level are a subset of those of a lower one. Noise
    injection draws from substream (seed, level index).
    """
    level = cfg.levels[index]
    nonzero = grid.nonzero_count()
    if cfg.mode == "under_report":
        perturbed = thin(grid, survival_map_from_alpha(level, *grid.shape), cfg.seed)
        ratio = empirical_ur(grid, perturbed)
    else:
        perturbed = noise_inject(grid, level, derive_seed(cfg.seed, NS_LEVEL, index))
        ratio = injected_count(grid, level) / nonzero if nonzero else 0.0
    p, s = proxy_scores(grid.data, perturbed.data)
    features = forward_features(perturbed.data, image, cfg, weights) if weights is not None else None
    row = SweepRow(
        level=level,
        empirical_ur=ratio,
        nonzero_before=nonzero,
        nonzero_after=perturbed.nonzero_count(),
        events_before=_abs_total(grid.data),
        events_after=_abs_total(perturbed.data),
        psnr=p,
        ssim=s,
        features=features,
    )
    logger.debug(f"[task] sweep_level level={level} ur={ratio:.6f} nonzero={nonzero}->{row.nonzero_after}")
    return row


def sweep_grid(
    grid: VoxelGrid, image: np.ndarray, cfg: SweepConfig, weights: Optional[NetWeights] = None
) -> list[SweepRow]:
    """Rows for every configured level; levels run on ``cfg.workers`` threads."""
    indices = range(len(cfg.levels))
    if cfg.workers <= 1 or len(cfg.levels) == 1:
        return [sweep_level(grid, image, cfg, i, weights) for i in indices]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(lambda i: sweep_level(grid, image, cfg, i, weights), indices))


def run_sweep(cfg: SweepConfig) -> SweepResult:
    """Perturb the dataset's voxel grid at every level and write the sweep CSV."""
    logger.info(f"[task] run_sweep start dataset={cfg.dataset} mode={cfg.mode} levels={len(cfg.levels)}")
    contents = ingest_dataset(cfg.dataset)
    grid = _event_grid(contents, cfg)
    image = _reference_image(contents, grid)
    weights = None
    if cfg.weights is not None:
        weights = read_weights(cfg.weights, MrmConfig(C=cfg.mrm_channels, T=cfg.bins, L=cfg.mrm_heads))

    rows = sweep_grid(grid, image, cfg, weights)
    result = SweepResult(
        mode=cfg.mode,
        rows=rows,
        seed=cfg.seed,
        config_hash=config_hash(cfg.hash_items()),
        created_at=datetime.now(timezone.utc).isoformat(),
    )
    csv_path = write_sweep_csv(result, cfg.output)
    meta = {
        "created_at": result.created_at,
        "config_hash": result.config_hash,
        "seed": result.seed,
        "mode": result.mode,
        "config": cfg.hash_items(),
    }
    atomic_write_text(f"{csv_path}.meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    logger.info(f"[task] run_sweep done csv={csv_path} hash={result.config_hash}")
    return result.model_copy(update={"csv_path": str(csv_path)})


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def format_sweep_csv(result: SweepResult) -> str:
    lines = [
        "# evrobust sweep",
        f"# mode: {result.mode}",
        f"# seed: {result.seed}",
        f"# config_hash: {result.config_hash}",
        ",".join(SWEEP_COLUMNS),
    ]
    for r in result.rows:
        f = r.features
        cells = [
            _fmt(r.level),
            _fmt(r.empirical_ur),
            str(r.nonzero_before),
            str(r.nonzero_after),
            str(r.events_before),
            str(r.events_after),
            _fmt(r.psnr),
            _fmt(r.ssim),
            _fmt(f.mean if f else None),
            _fmt(f.var if f else None),
            _fmt(f.max_abs if f else None),
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_sweep_csv(result: SweepResult, path: Union[str, Path]) -> Path:
    """Write the sweep CSV atomically; it carries no timestamp so reruns are byte-identical."""
    return atomic_write_text(path, format_sweep_csv(result))


def read_sweep_csv(path: Union[str, Path]) -> SweepResult:
    path = Path(path)
    meta: dict[str, str] = {}
    body = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, sep, value = line.lstrip("#").partition(":")
            if sep:
                meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line.split(","))
    if not body or tuple(body[0]) != SWEEP_COLUMNS:
        raise DatasetError(f"{path}: not a sweep CSV (expected columns {','.join(SWEEP_COLUMNS)})")
    rows = []
    for i, cells in enumerate(body[1:], start=1):
        if len(cells) != len(SWEEP_COLUMNS):
            raise DatasetError(f"{path}: row {i} has {len(cells)} cells, expected {len(SWEEP_COLUMNS)}")
        rec = dict(zip(SWEEP_COLUMNS, cells))
        try:
            features = None
            if rec["feat_mean"]:
                features = FeatureStats(
                    mean=float(rec["feat_mean"]), var=float(rec["feat_var"]), max_abs=float(rec["feat_max"])
                )
            rows.append(
                SweepRow(
                    level=float(rec["level"]),
                    empirical_ur=float(rec["empirical_ur"]),
                    nonzero_before=int(rec["nonzero_before"]),
                    nonzero_after=int(rec["nonzero_after"]),
                    events_before=int(rec["events_before"]),
                    events_after=int(rec["events_after"]),
                    psnr=float(rec["psnr"]),
                    ssim=float(rec["ssim"]),
                    features=features,
                )
            )
        except ValueError:
            raise DatasetError(f"{path}: bad sweep row {i}: {','.join(cells)}") from None
    return SweepResult(
        mode=meta.get("mode", "under_report"),
        rows=rows,
        seed=int(meta.get("seed", 0)),
        config_hash=meta.get("config_hash", ""),
        created_at="",
        csv_path=str(path),
    )


def is_sweep_csv(path: Union[str, Path]) -> bool:
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            return line.strip().split(",")[:2] == ["level", "empirical_ur"]
    return False


# ==================== COMPARISON ====================


def check_levels(result: SweepResult, tolerance_sigma: float = 3.0) -> list[LevelCheck]:
    """Binomial tolerance check of each row's empirical ratio against its level."""
    checks = []
    for r in result.rows:
        n = r.nonzero_before
        if n == 0:
            expected = 0.0
        elif result.mode == "under_report":
            expected = r.level
        else:
            expected = math.floor(r.level * n + 0.5) / n
        tolerance = tolerance_sigma * math.sqrt(expected * (1.0 - expected) / n) if n else 0.0
        ok = abs(r.empirical_ur - expected) <= tolerance + 1e-12
        checks.append(
            LevelCheck(level=r.level, expected=expected, observed=r.empirical_ur, tolerance=tolerance, ok=ok)
        )
    return checks


def load_result(path: Union[str, Path]) -> Union[SweepResult, RobustnessCurve]:
    """A sweep CSV becomes a SweepResult, anything else a plain curve."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"result file not found: {path}")
    return read_sweep_csv(path) if is_sweep_csv(path) else read_curve_csv(path)


def compare_to_reference(
    result: Union[SweepResult, RobustnessCurve],
    reference_csv: Union[str, Path],
    tolerance_sigma: float = 3.0,
) -> ComparisonReport:
    """Per-level deltas against a reference curve plus sweep invariant checks."""
    reference = read_curve_csv(reference_csv)
    if isinstance(result, SweepResult):
        curve = result.curve("sweep")
        checks = check_levels(result, tolerance_sigma)
        urs = [r.empirical_ur for r in result.rows]
        monotone = all(b >= a for a, b in zip(urs, urs[1:])) if result.mode == "under_report" else None
    else:
        curve, checks, monotone = result, [], None
    comparison = compare_curves(curve, reference)
    failing = [c.level for c in checks if not c.ok]
    if failing:
        logger.warning(f"[task] compare_to_reference failing levels={failing}")
    return ComparisonReport(
        comparison=comparison,
        result_curve=curve,
        reference_curve=reference,
        level_checks=checks,
        failing_levels=failing,
        empirical_monotone=monotone,
    )


# ==================== SIMULATE PIPELINE ====================
# Stages read their inputs from disk so they can run as separate assets.


def _theta_tag(theta: float) -> str:
    return repr(float(theta))


def _events_path(cfg: SimulateConfig, theta: float) -> Path:
    return cfg.output / f"events_theta_{_theta_tag(theta)}.evt"


def _voxel_path(cfg: SimulateConfig, theta: float) -> Path:
    return cfg.output / f"voxels_theta_{_theta_tag(theta)}.vox"


def _thinned_path(cfg: SimulateConfig, theta: float, level: float) -> Path:
    return cfg.output / f"thinned_theta_{_theta_tag(theta)}_ur_{repr(float(level))}.vox"


def stage_blur(cfg: SimulateConfig) -> Path:
    """Blurry image from the mean of the frames."""
    seq = read_frames(cfg.frames)
    return write_frame(synthesize_blur(seq), cfg.output / "blur.pgm")


def stage_events(cfg: SimulateConfig) -> dict[float, int]:
    """One event file per threshold; all thresholds share the noise draws of ``cfg.seed``."""
    seq = read_frames(cfg.frames)
    counts = {}
    for theta in cfg.thetas:
        stream = simulate_events(seq, DvsConfig(theta=theta, noise=cfg.noise, log_floor=cfg.log_floor), cfg.seed)
        write_events(stream, _events_path(cfg, theta))
        counts[theta] = len(stream)
    logger.info(f"[task] stage_events counts={counts}")
    return counts


def stage_voxels(cfg: SimulateConfig) -> list[Path]:
    paths = []
    for theta in cfg.thetas:
        grid = encode_voxel(read_events(_events_path(cfg, theta)), cfg.bins)
        paths.append(write_voxel(grid, _voxel_path(cfg, theta)))
    return paths


def stage_thinned(cfg: SimulateConfig) -> list[Path]:
    """Thinned variants per level, all levels drawn from the same thinning uniforms."""
    paths = []
    for theta in cfg.thetas:
        grid = read_voxel(_voxel_path(cfg, theta))
        for level in cfg.levels:
            thinned = thin(grid, survival_map_from_alpha(level, *grid.shape), cfg.seed)
            paths.append(write_voxel(thinned, _thinned_path(cfg, theta, level)))
    return paths


def stage_manifest(cfg: SimulateConfig) -> Manifest:
    """List every emitted file with its sha256 in ``manifest.yaml``."""
    entries = [ManifestEntry(path="blur.pgm", sha256=sha256_file(cfg.output / "blur.pgm"), kind="blur")]
    event_counts = {}
    for theta in cfg.thetas:
        ev_path = _events_path(cfg, theta)
        n_events = len(read_events(ev_path))
        event_counts[_theta_tag(theta)] = n_events
        entries.append(
            ManifestEntry(path=ev_path.name, sha256=sha256_file(ev_path), kind="events", theta=theta, events=n_events)
        )
        vox_path = _voxel_path(cfg, theta)
        entries.append(ManifestEntry(path=vox_path.name, sha256=sha256_file(vox_path), kind="voxels", theta=theta))
        for level in cfg.levels:
            th_path = _thinned_path(cfg, theta, level)
            entries.append(
                ManifestEntry(path=th_path.name, sha256=sha256_file(th_path), kind="thinned", theta=theta, level=level)
            )
    manifest = Manifest(entries=entries, event_counts=event_counts)
    atomic_write_text(cfg.output / "manifest.yaml", yaml.safe_dump(manifest.model_dump(), sort_keys=False))
    return manifest


def simulate_pipeline(cfg: SimulateConfig) -> Manifest:
    """frames -> blur + events per threshold -> voxel grids -> thinned variants -> manifest."""
    logger.info(f"[task] simulate_pipeline start frames={cfg.frames} thetas={cfg.thetas} levels={cfg.levels}")
    cfg.output.mkdir(parents=True, exist_ok=True)
    stage_blur(cfg)
    stage_events(cfg)
    stage_voxels(cfg)
    stage_thinned(cfg)
    manifest = stage_manifest(cfg)
    logger.info(f"[task] simulate_pipeline done files={len(manifest.entries)}")
    return manifest


def read_manifest(path: Union[str, Path]) -> Manifest:
    with open(path, encoding="utf-8") as f:
        return Manifest.model_validate(yaml.safe_load(f))

"""
Dagster assets that wrap the simulate stages in tasks.py.
Uses ordering-only dependencies - each stage reads its inputs from the output directory, no data passing.
"""
from typing import Optional

from dagster import asset, Config

from models import SimulateConfig
from tasks import (
    load_simulate_config,
    stage_blur,
    stage_events,
    stage_manifest,
    stage_thinned,
    stage_voxels,
)


class SimulateRunConfig(Config):
    frames: str
    output: str
    thetas: str = "0.2"
    levels: str = "0.0,0.1,0.2"
    bins: int = 6
    lam: float = 0.0
    sigma_n: float = 0.0
    seed: Optional[int] = None


def _simulate_config(config: SimulateRunConfig) -> SimulateConfig:
    overrides = {
        "frames": config.frames,
        "output": config.output,
        "thetas": config.thetas,
        "levels": config.levels,
        "bins": config.bins,
        "lam": config.lam,
        "sigma_n": config.sigma_n,
        "seed": config.seed,
    }
    cfg = load_simulate_config(overrides=overrides)
    cfg.output.mkdir(parents=True, exist_ok=True)
    return cfg


@asset(metadata={"stage": "blur", "outputs": ["blur.pgm"]})
def blur_asset(config: SimulateRunConfig) -> None:
    """Mean of the frames as a blurry image."""
    stage_blur(_simulate_config(config))


@asset(metadata={"stage": "events", "outputs": ["events_theta_*.evt"]})
def events_asset(config: SimulateRunConfig) -> None:
    """Simulated event stream for every threshold."""
    stage_events(_simulate_config(config))


@asset(
    deps=[events_asset],
    metadata={"stage": "voxels", "outputs": ["voxels_theta_*.vox"]},
)
def voxels_asset(config: SimulateRunConfig) -> None:
    stage_voxels(_simulate_config(config))


@asset(
    deps=[voxels_asset],
    metadata={"stage": "thinned", "outputs": ["thinned_theta_*_ur_*.vox"]},
)
def thinned_asset(config: SimulateRunConfig) -> None:
    """Thinned voxel grids at every under-reporting level."""
    stage_thinned(_simulate_config(config))


@asset(
    deps=[blur_asset, events_asset, voxels_asset, thinned_asset],
    metadata={"stage": "manifest", "outputs": ["manifest.yaml"]},
)
def manifest_asset(config: SimulateRunConfig) -> None:
    stage_manifest(_simulate_config(config))

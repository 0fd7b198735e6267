"""
Dagster definitions for the simulate pipeline.
"""
from dagster import Definitions

from assets import (
    blur_asset,
    events_asset,
    voxels_asset,
    thinned_asset,
    manifest_asset,
)

# All assets in pipeline order
all_assets = [
    blur_asset,
    events_asset,
    voxels_asset,
    thinned_asset,
    manifest_asset,
]

defs = Definitions(
    assets=all_assets,
)

# Use metadata_by_key since AssetsDefinition has no direct `metadata` attribute
asset_meta = {
    a.key.to_user_string(): {
        "stage": (a.metadata_by_key.get(a.key) or {}).get("stage"),
        "outputs": list((a.metadata_by_key.get(a.key) or {}).get("outputs", [])),
        "key": a.key,
    }
    for a in all_assets
}


def build_simulate_run_config(values: dict) -> dict:
    """Same config for every simulate asset: {"ops": {key: {"config": values}}}."""
    return {"ops": {key: {"config": dict(values)} for key in asset_meta}}

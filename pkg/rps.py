"""Robustness-oriented perturbation: survival maps and Bernoulli thinning.

A survival map holds, per temporal bin, the probability that a voxel cell
keeps its content. Thinning multiplies every cell by an independent
Bernoulli draw of that probability. The mask of bin ``tau`` comes from
substream ``(seed, tau)`` and is drawn for every cell regardless of content.
"""
from __future__ import annotations

from logging import getLogger

import numpy as np

from dvs import noise_samples
from errors import ConfigError, ShapeMismatchError
from models import EventStream, NoiseModel, PerturbConfig, SurvivalMap, VoxelGrid
from rng import NS_ALPHA, NS_BIN, NS_EVENTWISE, substream

logger = getLogger(__name__)


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")


# -------------------- Perturbation strength --------------------


def sample_alpha_schedule(cfg: PerturbConfig, n: int, seed: int = 0) -> np.ndarray:
    """Per-iteration strengths alpha ~ Uniform[alpha_min, alpha_max] for ``n`` iterations."""
    if n < 1:
        raise ConfigError(f"schedule length must be >= 1, got {n}")
    if cfg.alpha_min == cfg.alpha_max:
        return np.full(n, cfg.alpha_min)
    u = substream(seed, NS_ALPHA).random(n)
    return cfg.alpha_min + (cfg.alpha_max - cfg.alpha_min) * u


def sample_alpha(cfg: PerturbConfig, seed: int = 0) -> float:
    return float(sample_alpha_schedule(cfg, 1, seed)[0])


# -------------------- Survival maps --------------------


def survival_map_from_alpha(alpha: float, T: int, H: int, W: int) -> SurvivalMap:
    """Constant map pi = 1 - alpha in every bin."""
    _check_alpha(alpha)
    if min(T, H, W) < 1:
        raise ConfigError(f"survival map dimensions must be positive, got {T}x{H}x{W}")
    return SurvivalMap(maps=np.full((T, H, W), 1.0 - alpha))


def _trigger_counts(S: np.ndarray, sorted_noise: np.ndarray, theta: float) -> np.ndarray:
    """Per-cell count of samples with |S + n| >= theta (sorted samples, CRN)."""
    n = sorted_noise.shape[0]
    above = n - np.searchsorted(sorted_noise, theta - S, side="left")
    below = np.searchsorted(sorted_noise, -theta - S, side="right")
    return above + below


def _signal_field(S_field) -> np.ndarray:
    S = np.asarray(S_field, dtype=np.float64)
    if S.ndim != 3:
        raise ShapeMismatchError(f"signal field must be T x H x W, got shape {S.shape}")
    return S


def survival_map_from_threshold(
    S_field,
    noise: NoiseModel,
    theta: float,
    n_samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
) -> SurvivalMap:
    """Triggering probability P(|S + N| >= theta) per cell.

    One noise draw is shared by all cells; it is sorted once and each cell's
    count comes from two binary searches.
    """
    if theta <= 0:
        raise ConfigError(f"theta must be > 0, got {theta}")
    S = _signal_field(S_field)
    sorted_noise = np.sort(noise_samples(noise, n_samples, seed, workers))
    maps = _trigger_counts(S, sorted_noise, theta) / n_samples
    return SurvivalMap(maps=np.clip(maps, 0.0, 1.0))


def survival_map_conditional(
    S_field,
    noise: NoiseModel,
    theta: float,
    theta_ref: float,
    n_samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
) -> SurvivalMap:
    """P(|S+N| >= theta) / P(|S+N| >= theta_ref): survival of an event that fired at theta_ref.

    Cells where nothing fires at ``theta_ref`` get 0.
    """
    if theta_ref <= 0 or theta < theta_ref:
        raise ConfigError(f"need 0 < theta_ref <= theta, got theta={theta} theta_ref={theta_ref}")
    S = _signal_field(S_field)
    sorted_noise = np.sort(noise_samples(noise, n_samples, seed, workers))
    num = _trigger_counts(S, sorted_noise, theta).astype(np.float64)
    den = _trigger_counts(S, sorted_noise, theta_ref).astype(np.float64)
    maps = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return SurvivalMap(maps=np.clip(maps, 0.0, 1.0))


# -------------------- Thinning --------------------


def thin(grid: VoxelGrid, maps: SurvivalMap, seed: int = 0) -> VoxelGrid:
    """Keep each cell with probability pi_tau(y, x), zero it otherwise."""
    if maps.shape != grid.shape:
        raise ShapeMismatchError(f"survival map shape {maps.shape} != grid shape {grid.shape}")
    T, H, W = grid.shape
    out = np.empty_like(grid.data)
    for tau in range(T):
        keep = substream(seed, NS_BIN, tau).random((H, W)) < maps.maps[tau]
        out[tau] = np.where(keep, grid.data[tau], 0.0)
    return grid.with_data(out)


def perturb(grid: VoxelGrid, cfg: PerturbConfig, seed: int = 0) -> tuple[VoxelGrid, float]:
    """One training-iteration perturbation: sample alpha, thin with a constant map."""
    alpha = sample_alpha(cfg, seed)
    thinned = thin(grid, survival_map_from_alpha(alpha, *grid.shape), seed)
    logger.debug(f"[rps] perturb alpha={alpha:.4f} nonzero={grid.nonzero_count()}->{thinned.nonzero_count()}")
    return thinned, alpha


def thin_events(stream: EventStream, alpha: float, seed: int = 0) -> EventStream:
    """Eventwise mode: drop each event independently with probability alpha."""
    _check_alpha(alpha)
    keep = substream(seed, NS_EVENTWISE).random(len(stream)) >= alpha
    return stream.take(keep)


def empirical_ur(original: VoxelGrid, thinned: VoxelGrid) -> float:
    """Fraction of originally nonzero cells that are zero after thinning."""
    if original.shape != thinned.shape:
        raise ShapeMismatchError(f"grid shapes differ: {original.shape} vs {thinned.shape}")
    nonzero = original.data != 0
    total = int(np.count_nonzero(nonzero))
    if total == 0:
        return 0.0
    lost = int(np.count_nonzero(nonzero & (thinned.data == 0)))
    return lost / total

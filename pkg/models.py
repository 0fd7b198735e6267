"""Pydantic models for data validation and serialization.

Every config, domain container and task output passes through these models.
Array-backed containers keep their data in read-only numpy arrays.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterator, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from errors import EventValidationError, ShapeMismatchError
from utils import parse_float_list


def _frozen_array(value, dtype) -> np.ndarray:
    arr = np.array(value, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# -------------------- Events --------------------


class Event(BaseModel):
    """Single DVS event; polarity is the sign of the log-intensity change."""

    model_config = ConfigDict(frozen=True)

    t: int = Field(ge=0)  # microseconds
    x: int = Field(ge=0)
    y: int = Field(ge=0)
    polarity: Literal[-1, 1]


class EventStream(BaseModel):
    """Canonically sorted event columns from a sensor of known geometry.

    Events are ordered by (t, y, x, polarity). Build through ``from_arrays``
    which sorts; direct construction validates that the order already holds.
    ``t_start <= t <= t_end`` for every event.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    sensor_width: int = Field(gt=0)
    sensor_height: int = Field(gt=0)
    t_start: int = Field(ge=0)
    t_end: int = Field(ge=0)

    @field_validator("t", "x", "y", mode="before")
    @classmethod
    def _as_int64(cls, v):
        return _frozen_array(v, np.int64).reshape(-1)

    @field_validator("p", mode="before")
    @classmethod
    def _as_int8(cls, v):
        return _frozen_array(v, np.int8).reshape(-1)

    @model_validator(mode="after")
    def _check(self) -> "EventStream":
        n = self.t.shape[0]
        if not (self.x.shape[0] == self.y.shape[0] == self.p.shape[0] == n):
            raise EventValidationError("event columns have different lengths")
        if self.t_end < self.t_start:
            raise EventValidationError(f"t_end {self.t_end} < t_start {self.t_start}")
        if n == 0:
            return self
        checks = [
            (self.x >= self.sensor_width, "x >= sensor_width"),
            (self.y >= self.sensor_height, "y >= sensor_height"),
            ((self.x < 0) | (self.y < 0), "negative coordinate"),
            ((self.p != 1) & (self.p != -1), "polarity not in {-1, +1}"),
            ((self.t < self.t_start) | (self.t > self.t_end), "timestamp outside [t_start, t_end]"),
        ]
        for bad, what in checks:
            if bad.any():
                i = int(np.argmax(bad))
                raise EventValidationError(
                    f"event {i} (t={self.t[i]} x={self.x[i]} y={self.y[i]} p={self.p[i]}): {what}"
                )
        order = np.lexsort((self.p, self.x, self.y, self.t))
        if not np.array_equal(order, np.arange(n)):
            raise EventValidationError("events are not in canonical (t, y, x, polarity) order")
        return self

    @classmethod
    def from_arrays(
        cls,
        t,
        x,
        y,
        p,
        sensor_width: int,
        sensor_height: int,
        t_start: int,
        t_end: int,
    ) -> "EventStream":
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        p = np.asarray(p, dtype=np.int64).reshape(-1)
        order = np.lexsort((p, x, y, t))
        return cls(
            t=t[order],
            x=x[order],
            y=y[order],
            p=p[order],
            sensor_width=sensor_width,
            sensor_height=sensor_height,
            t_start=t_start,
            t_end=t_end,
        )

    @classmethod
    def from_events(
        cls, events: list[Event], sensor_width: int, sensor_height: int, t_start: int, t_end: int
    ) -> "EventStream":
        return cls.from_arrays(
            [e.t for e in events],
            [e.x for e in events],
            [e.y for e in events],
            [e.polarity for e in events],
            sensor_width,
            sensor_height,
            t_start,
            t_end,
        )

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def iter_events(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(t=int(self.t[i]), x=int(self.x[i]), y=int(self.y[i]), polarity=int(self.p[i]))

    def take(self, keep: np.ndarray) -> "EventStream":
        """Sub-stream of the events selected by a boolean mask (order kept)."""
        return EventStream(
            t=self.t[keep],
            x=self.x[keep],
            y=self.y[keep],
            p=self.p[keep],
            sensor_width=self.sensor_width,
            sensor_height=self.sensor_height,
            t_start=self.t_start,
            t_end=self.t_end,
        )

    def equals(self, other: "EventStream") -> bool:
        return (
            self.sensor_width == other.sensor_width
            and self.sensor_height == other.sensor_height
            and self.t_start == other.t_start
            and self.t_end == other.t_end
            and all(
                np.array_equal(getattr(self, c), getattr(other, c)) for c in ("t", "x", "y", "p")
            )
        )


class StreamStats(BaseModel):
    """Output of stream_stats."""

    count_pos: int
    count_neg: int
    mean_rate_per_second: float
    zero_span: bool = False


class VoxelGrid(BaseModel):
    """T x H x W signed accumulation of events over temporal bins."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray
    t_start: int = 0
    t_end: int = 0

    @field_validator("data", mode="before")
    @classmethod
    def _as_float(cls, v):
        arr = _frozen_array(v, np.float64)
        if arr.ndim != 3:
            raise ShapeMismatchError(f"voxel data must be T x H x W, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ShapeMismatchError("voxel grid needs at least one bin")
        if not np.isfinite(arr).all():
            raise EventValidationError("voxel grid contains non-finite values")
        return arr

    @property
    def bins(self) -> int:
        return int(self.data.shape[0])

    @property
    def height(self) -> int:
        return int(self.data.shape[1])

    @property
    def width(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    def with_data(self, data: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(data=data, t_start=self.t_start, t_end=self.t_end)

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.data))


# -------------------- DVS model --------------------


class NoiseModel(BaseModel):
    """Mixed Poisson + Gaussian noise on log-intensity increments.

    ``lam`` is the Poisson rate per frame interval (file key ``lambda``).
    With ``centered`` the Poisson part enters as ``N_p - lam`` so the noise
    has zero mean.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(0.0, ge=0.0, alias="lambda")
    sigma_n: float = Field(0.0, ge=0.0)
    centered: bool = True

    @property
    def is_silent(self) -> bool:
        return self.lam == 0.0 and self.sigma_n == 0.0


class DvsConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta: float = Field(gt=0.0)
    noise: NoiseModel = Field(default_factory=NoiseModel)
    log_floor: float = Field(1.0 / 255.0, gt=0.0)


class FrameSequence(BaseModel):
    """Ordered grayscale frames in [0, 1] with strictly increasing timestamps."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frames: np.ndarray  # K x H x W
    timestamps: np.ndarray  # K, microseconds

    @field_validator("frames", mode="before")
    @classmethod
    def _frames(cls, v):
        arr = _frozen_array(v, np.float64)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ShapeMismatchError(f"frames must be K x H x W with K >= 1, got {arr.shape}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise EventValidationError("frame values must lie in [0, 1]")
        return arr

    @field_validator("timestamps", mode="before")
    @classmethod
    def _timestamps(cls, v):
        return _frozen_array(v, np.int64).reshape(-1)

    @model_validator(mode="after")
    def _check(self) -> "FrameSequence":
        if self.timestamps.shape[0] != self.frames.shape[0]:
            raise ShapeMismatchError(
                f"{self.frames.shape[0]} frames but {self.timestamps.shape[0]} timestamps"
            )
        if self.timestamps.shape[0] > 1 and not (np.diff(self.timestamps) > 0).all():
            raise EventValidationError("frame timestamps must be strictly increasing")
        return self

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])


class Estimate(BaseModel):
    """Monte-Carlo probability estimate with its standard error."""

    value: float
    stderr: float
    n_samples: int


# -------------------- Perturbation --------------------


class SurvivalMap(BaseModel):
    """Per-bin survival probabilities pi_tau(x, y), all in [0, 1]."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    maps: np.ndarray

    @field_validator("maps", mode="before")
    @classmethod
    def _maps(cls, v):
        arr = _frozen_array(v, np.float64)
        if arr.ndim != 3:
            raise ShapeMismatchError(f"survival maps must be T x H x W, got {arr.shape}")
        if arr.size and (not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0):
            raise EventValidationError("survival probabilities must lie in [0, 1]")
        return arr

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.maps.shape  # type: ignore[return-value]

    def bin_means(self) -> np.ndarray:
        return self.maps.reshape(self.maps.shape[0], -1).mean(axis=1)


class PerturbConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha_min: float = Field(0.0, ge=0.0, le=1.0)
    alpha_max: float = Field(0.2, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _ordered(self) -> "PerturbConfig":
        if self.alpha_min > self.alpha_max:
            raise ValueError("alpha_min must not exceed alpha_max")
        return self


# -------------------- Attention config --------------------


class MrmConfig(BaseModel):
    """Channel/temporal factorization N = C x T split across L heads."""

    model_config = ConfigDict(frozen=True)

    C: int = Field(gt=0)
    T: int = Field(gt=0)
    L: int = Field(1, gt=0)
    residual: bool = True

    @model_validator(mode="after")
    def _heads_divide(self) -> "MrmConfig":
        if self.C % self.L or self.T % self.L:
            raise ValueError(f"head count L={self.L} must divide C={self.C} and T={self.T}")
        return self

    @property
    def C_L(self) -> int:
        return self.C // self.L

    @property
    def T_L(self) -> int:
        return self.T // self.L

    @property
    def N(self) -> int:
        return self.C * self.T


# -------------------- Metrics --------------------


class PsnrScore(BaseModel):
    """PSNR in dB; identical images report 99.0 with ``exact_match``."""

    db: float
    exact_match: bool = False


class CurveRow(BaseModel):
    level: float
    psnr: float
    ssim: float = Field(ge=-1.0, le=1.0)


class RobustnessCurve(BaseModel):
    label: str = ""
    rows: list[CurveRow] = Field(default_factory=list)

    @model_validator(mode="after")
    def _increasing(self) -> "RobustnessCurve":
        levels = [r.level for r in self.rows]
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("curve levels must be strictly increasing")
        return self

    @property
    def levels(self) -> list[float]:
        return [r.level for r in self.rows]

    def row_at(self, level: float) -> Optional[CurveRow]:
        for r in self.rows:
            if r.level == level:
                return r
        return None


class TableRow(BaseModel):
    """One published result keyed by its setting columns (method, dataset, ablation switches)."""

    setting: dict[str, str]
    psnr: float
    ssim: float = Field(ge=-1.0, le=1.0)


class ReferenceTable(BaseModel):
    label: str = ""
    keys: list[str]
    rows: list[TableRow] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_settings(self) -> "ReferenceTable":
        seen = set()
        for r in self.rows:
            if sorted(r.setting) != sorted(self.keys):
                raise ValueError(f"row setting {r.setting} does not match key columns {self.keys}")
            key = tuple(r.setting[k] for k in self.keys)
            if key in seen:
                raise ValueError(f"duplicate setting {key}")
            seen.add(key)
        return self

    def lookup(self, **setting: str) -> Optional[TableRow]:
        """The row whose setting matches every given column."""
        for r in self.rows:
            if all(r.setting.get(k) == v for k, v in setting.items()):
                return r
        return None


class CurveDelta(BaseModel):
    level: float
    psnr: float
    ssim: float


class CurveComparison(BaseModel):
    deltas: list[CurveDelta]
    first_monotone: bool  # PSNR non-increasing in level
    second_monotone: bool


# -------------------- Harness --------------------


def _levels(v) -> list[float]:
    levels = parse_float_list(v)
    if not levels:
        raise ValueError("at least one level is required")
    if any(not 0.0 <= lv <= 1.0 for lv in levels):
        raise ValueError("levels must lie in [0, 1]")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must be strictly increasing")
    return levels


class SweepConfig(BaseModel):
    """Robustness sweep configuration (flat ``key = value`` file)."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    dataset: Path
    output: Path
    mode: Literal["under_report", "noise_inject"] = "under_report"
    levels: list[float] = Field(default_factory=lambda: [0.0, 0.05, 0.1, 0.15, 0.2, 0.3])
    bins: int = Field(6, ge=1)
    theta: float = Field(0.2, gt=0.0)
    lam: float = Field(0.0, ge=0.0, alias="lambda")
    sigma_n: float = Field(0.0, ge=0.0)
    seed: int = 0
    weights: Optional[Path] = None
    crop: int = Field(64, ge=2)
    mrm_channels: int = Field(2, gt=0)
    mrm_heads: int = Field(1, gt=0)
    workers: int = Field(1, ge=1)
    tolerance_sigma: float = Field(3.0, gt=0.0)

    @field_validator("levels", mode="before")
    @classmethod
    def _parse_levels(cls, v):
        return _levels(v)

    @field_validator("weights", mode="before")
    @classmethod
    def _blank_weights(cls, v):
        return None if v in ("", None) else v

    @field_validator("crop")
    @classmethod
    def _even_crop(cls, v: int) -> int:
        if v % 2:
            raise ValueError("crop must be even")
        return v

    @model_validator(mode="after")
    def _heads_divide(self) -> "SweepConfig":
        if self.mrm_channels % self.mrm_heads or self.bins % self.mrm_heads:
            raise ValueError(
                f"mrm_heads={self.mrm_heads} must divide mrm_channels={self.mrm_channels} and bins={self.bins}"
            )
        return self

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(lam=self.lam, sigma_n=self.sigma_n)

    def hash_items(self) -> dict[str, object]:
        """Fields that affect results; ``workers`` and ``output`` do not."""
        data = self.model_dump(by_alias=True, exclude={"workers", "output"})
        return {k: (str(v) if isinstance(v, Path) else v) for k, v in data.items()}


class SimulateConfig(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    frames: Path
    output: Path
    thetas: list[float] = Field(default_factory=lambda: [0.2])
    levels: list[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2])
    bins: int = Field(6, ge=1)
    lam: float = Field(0.0, ge=0.0, alias="lambda")
    sigma_n: float = Field(0.0, ge=0.0)
    log_floor: float = Field(1.0 / 255.0, gt=0.0)
    seed: int = 0

    @field_validator("thetas", mode="before")
    @classmethod
    def _thetas(cls, v):
        thetas = parse_float_list(v)
        if not thetas or any(t <= 0 for t in thetas):
            raise ValueError("thetas must be positive")
        return thetas

    @field_validator("levels", mode="before")
    @classmethod
    def _parse_levels(cls, v):
        return _levels(v)

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(lam=self.lam, sigma_n=self.sigma_n)


class FeatureStats(BaseModel):
    mean: float
    var: float
    max_abs: float


class SweepRow(BaseModel):
    level: float
    empirical_ur: float  # under_report: fraction of nonzero cells zeroed; noise_inject: injected/nonzero
    nonzero_before: int
    nonzero_after: int
    events_before: int  # sum of |cell| values
    events_after: int
    psnr: float
    ssim: float
    features: Optional[FeatureStats] = None


class SweepResult(BaseModel):
    mode: str
    rows: list[SweepRow]
    seed: int
    config_hash: str
    created_at: str
    csv_path: Optional[str] = None

    def curve(self, label: str = "sweep") -> RobustnessCurve:
        return RobustnessCurve(
            label=label,
            rows=[CurveRow(level=r.level, psnr=r.psnr, ssim=r.ssim) for r in self.rows],
        )


class ImagePair(BaseModel):
    name: str
    blur: Path
    sharp: Path


class ManifestEntry(BaseModel):
    path: str
    sha256: str
    kind: str
    theta: Optional[float] = None
    level: Optional[float] = None
    events: Optional[int] = None


class Manifest(BaseModel):
    entries: list[ManifestEntry]
    event_counts: dict[str, int] = Field(default_factory=dict)  # repr(theta) -> count

    def checksums(self) -> dict[str, str]:
        return {e.path: e.sha256 for e in self.entries}


class LevelCheck(BaseModel):
    level: float
    expected: float
    observed: float
    tolerance: float
    ok: bool


class ComparisonReport(BaseModel):
    comparison: CurveComparison
    result_curve: RobustnessCurve
    reference_curve: RobustnessCurve
    level_checks: list[LevelCheck] = Field(default_factory=list)
    failing_levels: list[float] = Field(default_factory=list)
    empirical_monotone: Optional[bool] = None  # empirical UR non-decreasing in level

    @property
    def exit_code(self) -> int:
        return 2 if self.failing_levels else 0


class DatasetContents(BaseModel):
    """What ingest_dataset found under a dataset root."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    root: Path
    frames: Optional[FrameSequence] = None
    events: Optional[EventStream] = None
    pairs: list[ImagePair] = Field(default_factory=list)
    blur_residual: Optional[float] = None  # max |first blur image - mean of frames|

    def summary(self) -> dict[str, object]:
        return {
            "root": str(self.root),
            "frames": len(self.frames) if self.frames is not None else None,
            "events": len(self.events) if self.events is not None else None,
            "pairs": len(self.pairs),
            "blur_residual": self.blur_residual,
        }

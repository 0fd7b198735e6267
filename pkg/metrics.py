"""Image-quality metrics and robustness curves.

PSNR uses one MSE over all pixels and channels. SSIM uses an 11x11
Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03 and population
statistics, averaged over valid window positions and channels.

Curve CSV::

    # label: <name>
    # <free-form provenance comments>
    level,psnr,ssim
    0.0,37.63,0.9802

Reference tables use the same comment header with setting columns in
place of ``level``, e.g. ``dataset,method,psnr,ssim``.
"""
from __future__ import annotations

import csv
import io
from logging import getLogger
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from skimage.metrics import mean_squared_error, peak_signal_noise_ratio, structural_similarity

from errors import DatasetError, GridMismatchError, ImageError, ShapeMismatchError
from models import CurveComparison, CurveDelta, CurveRow, PsnrScore, ReferenceTable, RobustnessCurve, TableRow
from utils import atomic_write_text

logger = getLogger(__name__)

EXACT_MATCH_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
CURVE_COLUMNS = ("level", "psnr", "ssim")


def _images(a, b, peak: float) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ShapeMismatchError(f"images must be H x W or H x W x C, got {a.shape}")
    if peak <= 0:
        raise ImageError(f"peak must be > 0, got {peak}")
    for name, img in (("a", a), ("b", b)):
        if not np.isfinite(img).all() or img.min() < 0.0 or img.max() > peak:
            raise ImageError(f"image {name} has values outside [0, {peak}]")
    return a, b


def psnr(a, b, peak: float = 1.0) -> PsnrScore:
    """10 log10(peak^2 / MSE); identical images report 99.0 dB with ``exact_match``."""
    a, b = _images(a, b, peak)
    if mean_squared_error(a, b) == 0.0:
        return PsnrScore(db=EXACT_MATCH_DB, exact_match=True)
    return PsnrScore(db=float(peak_signal_noise_ratio(a, b, data_range=peak)))


def ssim(a, b, peak: float = 1.0) -> float:
    a, b = _images(a, b, peak)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ImageError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    return float(
        structural_similarity(
            a,
            b,
            data_range=peak,
            channel_axis=-1 if a.ndim == 3 else None,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=0.01,
            K2=0.03,
        )
    )


# -------------------- Curves --------------------


def build_curve(rows: Iterable, label: str = "") -> RobustnessCurve:
    """Curve from CurveRows or (level, psnr, ssim) tuples, sorted by level."""
    parsed = []
    for r in rows:
        if isinstance(r, CurveRow):
            parsed.append(r)
        else:
            level, p, s = r
            parsed.append(CurveRow(level=float(level), psnr=float(p), ssim=float(s)))
    parsed.sort(key=lambda r: r.level)
    return RobustnessCurve(label=label, rows=parsed)


def is_non_increasing(values: Sequence[float]) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


def compare_curves(c1: RobustnessCurve, c2: RobustnessCurve) -> CurveComparison:
    """Per-level deltas c1 - c2 plus a PSNR monotonicity verdict for each curve."""
    if c1.levels != c2.levels:
        missing = sorted(set(c1.levels) ^ set(c2.levels))
        raise GridMismatchError(f"curve levels differ: {c1.levels} vs {c2.levels} (unmatched: {missing})")
    deltas = [
        CurveDelta(level=r1.level, psnr=r1.psnr - r2.psnr, ssim=r1.ssim - r2.ssim)
        for r1, r2 in zip(c1.rows, c2.rows)
    ]
    return CurveComparison(
        deltas=deltas,
        first_monotone=is_non_increasing([r.psnr for r in c1.rows]),
        second_monotone=is_non_increasing([r.psnr for r in c2.rows]),
    )


def format_curve_csv(curve: RobustnessCurve, comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    if curve.label:
        buf.write(f"# label: {curve.label}\n")
    for c in comments:
        buf.write(f"# {c}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CURVE_COLUMNS)
    for r in curve.rows:
        writer.writerow([repr(r.level), repr(r.psnr), repr(r.ssim)])
    return buf.getvalue()


def write_curve_csv(curve: RobustnessCurve, path: Union[str, Path], comments: Sequence[str] = ()) -> Path:
    return atomic_write_text(path, format_curve_csv(curve, comments))


def _read_commented_csv(path: Path, what: str) -> tuple[Optional[str], csv.DictReader]:
    """Strip ``#`` lines, returning the ``# label:`` value and a reader over the rest."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"cannot read {what} {path}: {e}") from None
    body = []
    found_label = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("#"):
            comment = stripped.lstrip("#").strip()
            if comment.lower().startswith("label:"):
                found_label = comment.split(":", 1)[1].strip()
            continue
        if stripped:
            body.append(line)
    return found_label, csv.DictReader(body)


def csv_columns(path: Union[str, Path]) -> list[str]:
    """Header columns of a commented CSV, skipping ``#`` lines."""
    return list(_read_commented_csv(Path(path), "csv")[1].fieldnames or [])



def read_curve_csv(path: Union[str, Path], label: Optional[str] = None) -> RobustnessCurve:
    """Read ``level,psnr,ssim`` (extra columns ignored) with ``#`` comment lines."""
    path = Path(path)
    found_label, reader = _read_commented_csv(path, "curve")
    if reader.fieldnames is None or any(c not in reader.fieldnames for c in CURVE_COLUMNS):
        raise DatasetError(f"{path}: curve CSV needs columns {', '.join(CURVE_COLUMNS)}")
    rows = []
    for i, rec in enumerate(reader, start=1):
        try:
            rows.append((float(rec["level"]), float(rec["psnr"]), float(rec["ssim"])))
        except (TypeError, ValueError):
            raise DatasetError(f"{path}: bad curve row {i}: {rec}") from None
    curve = build_curve(rows, label=label or found_label or path.stem)
    logger.debug(f"[metrics] read_curve path={path} rows={len(curve.rows)}")
    return curve


# -------------------- Reference tables --------------------


def read_table_csv(path: Union[str, Path]) -> ReferenceTable:
    """Read a published result table: setting columns followed by ``psnr,ssim``.

    Every column other than psnr and ssim is a setting key (method, dataset or
    an on/off ablation switch); values stay strings.
    """
    path = Path(path)
    found_label, reader = _read_commented_csv(path, "table")
    columns = reader.fieldnames or []
    keys = [c for c in columns if c not in ("psnr", "ssim")]
    if "psnr" not in columns or "ssim" not in columns or not keys:
        raise DatasetError(f"{path}: table CSV needs setting columns plus psnr, ssim")
    rows = []
    for i, rec in enumerate(reader, start=1):
        try:
            rows.append(
                TableRow(
                    setting={k: rec[k].strip() for k in keys},
                    psnr=float(rec["psnr"]),
                    ssim=float(rec["ssim"]),
                )
            )
        except (AttributeError, TypeError, ValueError):
            raise DatasetError(f"{path}: bad table row {i}: {rec}") from None
    try:
        table = ReferenceTable(label=found_label or path.stem, keys=keys, rows=rows)
    except ValueError as e:
        raise DatasetError(f"{path}: {e}") from None
    logger.debug(f"[metrics] read_table path={path} rows={len(table.rows)}")
    return table

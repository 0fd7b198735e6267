"""``evrobust`` command line.

Results go to stdout, logs to stderr. Exit codes: 0 success, 1 invalid
input (EvRobustError, pydantic ValidationError, unreadable files),
2 a statistical invariant failed.
"""
import argparse
import json
import logging
import sys
from logging import getLogger
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from dvs import read_image
from errors import EvRobustError, InvariantFailure
from events import read_events, read_voxel, stream_stats, write_events, write_voxel
from metrics import csv_columns, psnr, read_table_csv, ssim
from models import MrmConfig, SweepResult
from net.weights import identity_net_weights, random_net_weights, read_weights, weight_sections, write_weights
from rps import empirical_ur, survival_map_from_alpha, thin, thin_events
from tasks import (
    compare_to_reference,
    load_result,
    load_simulate_config,
    load_sweep_config,
    run_sweep,
    simulate_pipeline,
)

logger = getLogger(__name__)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


# -------------------- Commands --------------------


def cmd_sweep(args) -> int:
    overrides = {"workers": args.workers, "output": args.output, "seed": args.seed}
    cfg = load_sweep_config(args.config, overrides)
    result = run_sweep(cfg)
    for r in result.rows:
        print(
            f"level={r.level!r} empirical_ur={r.empirical_ur:.6f} nonzero={r.nonzero_before}->{r.nonzero_after} "
            f"psnr={r.psnr:.4f} ssim={r.ssim:.4f}"
        )
    print(f"csv={result.csv_path} config_hash={result.config_hash}")
    if args.check:
        report = compare_to_reference(result, args.check, cfg.tolerance_sigma)
        _print_report(report)
        _raise_on_failure(report)
    return 0


def cmd_simulate(args) -> int:
    overrides = {
        "frames": args.frames,
        "output": args.out,
        "thetas": args.theta,
        "levels": args.levels,
        "bins": args.bins,
        "lam": args.lam,
        "sigma_n": args.sigma_n,
        "seed": args.seed,
    }
    cfg = load_simulate_config(args.config, overrides)
    manifest = simulate_pipeline(cfg)
    for theta, count in manifest.event_counts.items():
        print(f"theta={theta} events={count}")
    print(f"manifest={cfg.output / 'manifest.yaml'} files={len(manifest.entries)}")
    return 0


def cmd_thin(args) -> int:
    """Thin a voxel grid (or, for .evt input, each event) with strength alpha."""
    src = Path(args.input)
    if src.suffix.lower() == ".evt":
        stream = read_events(src)
        thinned = thin_events(stream, args.alpha, args.seed)
        write_events(thinned, args.out)
        print(f"events={len(stream)}->{len(thinned)} out={args.out}")
        return 0
    grid = read_voxel(src)
    maps = survival_map_from_alpha(args.alpha, *grid.shape)
    thinned = thin(grid, maps, args.seed)
    write_voxel(thinned, args.out)
    if args.map:
        write_voxel(maps, args.map)
    print(
        f"nonzero={grid.nonzero_count()}->{thinned.nonzero_count()} "
        f"empirical_ur={empirical_ur(grid, thinned):.6f} out={args.out}"
    )
    return 0


def cmd_metrics(args) -> int:
    a = read_image(args.a, gray=not args.rgb)
    b = read_image(args.b, gray=not args.rgb)
    score = psnr(a, b, args.peak)
    _emit({"psnr": score.db, "exact_match": score.exact_match, "ssim": ssim(a, b, args.peak)})
    return 0


def _print_report(report) -> None:
    print(f"result={report.result_curve.label} reference={report.reference_curve.label}")
    print("level,delta_psnr,delta_ssim,reference_psnr,reference_ssim")
    for d in report.comparison.deltas:
        ref = report.reference_curve.row_at(d.level)
        print(f"{d.level!r},{d.psnr:+.4f},{d.ssim:+.4f},{ref.psnr!r},{ref.ssim!r}")
    print(
        f"monotone result={report.comparison.first_monotone} reference={report.comparison.second_monotone}"
        + ("" if report.empirical_monotone is None else f" empirical_ur={report.empirical_monotone}")
    )
    for c in report.level_checks:
        status = "ok" if c.ok else "FAIL"
        print(f"check level={c.level!r} expected={c.expected:.6f} observed={c.observed:.6f} tol={c.tolerance:.6f} {status}")


def _raise_on_failure(report) -> None:
    if report.failing_levels:
        raise InvariantFailure(
            f"empirical ratio outside tolerance at levels {report.failing_levels}",
            failing=[repr(lv) for lv in report.failing_levels],
        )


def cmd_compare(args) -> int:
    result = load_result(args.result)
    report = compare_to_reference(result, args.reference, args.tolerance_sigma)
    _print_report(report)
    _raise_on_failure(report)
    return 0


def cmd_inspect(args) -> int:
    """Summarize an .evt, .vox, weights or result CSV file."""
    path = Path(args.path)
    suffix = path.suffix.lower()
    if suffix == ".evt":
        stream = read_events(path)
        stats = stream_stats(stream)
        _emit(
            {
                "kind": "events",
                "sensor": [stream.sensor_width, stream.sensor_height],
                "span_us": [stream.t_start, stream.t_end],
                "events": len(stream),
                **stats.model_dump(),
            }
        )
    elif suffix == ".vox":
        grid = read_voxel(path)
        _emit(
            {
                "kind": "voxels",
                "shape": list(grid.shape),
                "nonzero": grid.nonzero_count(),
                "abs_sum": float(abs(grid.data).sum()),
            }
        )
    elif suffix == ".csv" and "level" not in csv_columns(path):
        table = read_table_csv(path)
        _emit({"kind": "table", "label": table.label, "keys": table.keys, "rows": len(table.rows)})
    elif suffix == ".csv":
        result = load_result(path)
        if isinstance(result, SweepResult):
            _emit({"kind": "sweep", "mode": result.mode, "seed": result.seed, "config_hash": result.config_hash, "rows": len(result.rows)})
        else:
            _emit({"kind": "curve", "label": result.label, "levels": result.levels})
    else:
        weights = read_weights(path)
        sections = weight_sections(weights)
        _emit(
            {
                "kind": "weights",
                "config": weights.cfg.model_dump(),
                "sections": {k: list(v.shape) for k, v in sections.items()},
            }
        )
    return 0


def cmd_init_weights(args) -> int:
    cfg = MrmConfig(C=args.channels, T=args.bins, L=args.heads)
    weights = identity_net_weights(cfg) if args.identity else random_net_weights(cfg, args.seed)
    write_weights(weights, args.out)
    print(f"weights={args.out} C={cfg.C} T={cfg.T} L={cfg.L} identity={args.identity}")
    return 0


# -------------------- Parser --------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evrobust", description="Event-stream robustness toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run an under-reporting / noise-injection sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--output")
    p.add_argument("--seed", type=int)
    p.add_argument("--check", metavar="REFERENCE_CSV", help="compare against a reference curve afterwards")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="frames -> blur, events, voxel grids, thinned variants, manifest")
    p.add_argument("--frames")
    p.add_argument("--theta", help="threshold or comma-separated list")
    p.add_argument("--out")
    p.add_argument("--levels")
    p.add_argument("--bins", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--sigma-n", dest="sigma_n", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_simulate)

    for name in ("thin", "rps-thin"):
        p = sub.add_parser(name, help="Bernoulli thinning with a constant survival map")
        p.add_argument("--in", dest="input", required=True)
        p.add_argument("--alpha", type=float, required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--map", help="also write the survival map (VOX1)")
        p.set_defaults(func=cmd_thin)

    p = sub.add_parser("metrics", help="PSNR / SSIM between two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("--rgb", action="store_true", help="score color channels jointly")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("compare", help="compare a result CSV with a reference curve")
    p.add_argument("--result", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--tolerance-sigma", dest="tolerance_sigma", type=float, default=3.0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect", help="summarize an .evt, .vox, .csv or weights file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("init-weights", help="write an MRMW1 weights file")
    p.add_argument("--out", required=True)
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--bins", type=int, default=6)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identity", action="store_true")
    p.set_defaults(func=cmd_init_weights)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except InvariantFailure as e:
        logger.error(f"[cli] invariant failure: {e}")
        return 2
    except (EvRobustError, ValidationError, OSError) as e:
        logger.error(f"[cli] {args.command} failed: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())

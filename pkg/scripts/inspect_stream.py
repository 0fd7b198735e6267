#!/usr/bin/env python3
"""
Manual check of an event file: stream stats, per-bin voxel occupancy and
how much of the grid survives thinning at a few strengths.

Usage:
    python scripts/inspect_stream.py path/to/events.evt [bins] [seed]

Example:
    python scripts/inspect_stream.py data/run1/events.evt 6 0
"""

import os
import sys

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np

from events import encode_voxel, read_events, stream_stats
from rps import empirical_ur, survival_map_from_alpha, thin

ALPHAS = (0.05, 0.1, 0.2, 0.3, 0.5)


def inspect_stream(path: str, bins: int = 6, seed: int = 0):
    print(f"\n{'='*60}")
    print(f"Events: {path}")
    print(f"{'='*60}\n")

    stream = read_events(path)
    stats = stream_stats(stream)
    print(f"sensor {stream.sensor_width}x{stream.sensor_height} span [{stream.t_start}, {stream.t_end}] us")
    print(f"events {len(stream)} (+{stats.count_pos} / -{stats.count_neg}) rate {stats.mean_rate_per_second:.1f}/s")
    if stats.zero_span:
        print("zero-length span, no voxel grid")
        return

    grid = encode_voxel(stream, bins)
    print(f"\nvoxel grid {grid.shape}, nonzero cells {grid.nonzero_count()}")
    for t in range(grid.bins):
        layer = grid.data[t]
        print(f"  bin {t}: nonzero={np.count_nonzero(layer):6d} sum={layer.sum():+8.0f} max|v|={np.abs(layer).max():.0f}")

    print("\nthinning (constant survival map):")
    for alpha in ALPHAS:
        thinned = thin(grid, survival_map_from_alpha(alpha, *grid.shape), seed)
        print(f"  alpha={alpha:<5} empirical_ur={empirical_ur(grid, thinned):.4f} nonzero={thinned.nonzero_count()}")


if __name__ == "__main__":
    if len(sys.argv) < 2:
        print(__doc__)
        sys.exit(1)

    bins = int(sys.argv[2]) if len(sys.argv) > 2 else 6
    seed = int(sys.argv[3]) if len(sys.argv) > 3 else 0
    inspect_stream(sys.argv[1], bins, seed)

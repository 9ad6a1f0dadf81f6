"""Turn an I/O trace into write-pattern scatter data (tick vs. byte offset)."""

from __future__ import annotations

import csv
from typing import Optional

from ..store import IoTrace


def plot_trace(trace_path, out_path: Optional[str] = None) -> list[tuple[int, int]]:
    """Write events of a trace as ``(tick, offset)`` points, optionally saved as CSV."""
    points = [(tick, off) for tick, op, off, _len in IoTrace.load(trace_path).events if op == "W"]
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tick", "offset"])
            w.writerows(points)
    return points


def ascending_runs(points: list[tuple[int, int]]) -> list[list[tuple[int, int]]]:
    """Split points into maximal runs of strictly increasing offsets."""
    runs: list = []
    for p in points:
        if runs and p[1] > runs[-1][-1][1]:
            runs[-1].append(p)
        else:
            runs.append([p])
    return runs
